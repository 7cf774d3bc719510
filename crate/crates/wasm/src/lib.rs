//! Browser bindings: synthesize a clustered dataset, fit a kernel regressor
//! with user-chosen bandwidth settings, rasterize it, and inspect single
//! locations.

use stkr_core::data::{Dataset, ScoreRule};
use stkr_core::index::{Metric, PointIndex};
use stkr_core::kernel::{KernelConfig, KernelKind, KernelModel, RegionParams};
use stkr_core::metrics::classify_service;
use stkr_core::preprocess::{knn_average, segment_grid, GridSegmentation, Region, DEFAULT_GRID};
use stkr_core::raster::{Bounds, Raster};
use stkr_core::synth::{generate, SynthParams};
use wasm_bindgen::prelude::*;

const SMOOTH_K: usize = 5;

fn js_err(e: stkr_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

struct Models {
    score: KernelModel,
    down: KernelModel,
    up: KernelModel,
}

#[wasm_bindgen]
pub struct Demo {
    data: Dataset,
    seg: GridSegmentation,
    bounds: Bounds,
    models: Option<Models>,
    last: Option<Raster>,
}

#[wasm_bindgen]
impl Demo {
    /// Generates `n_dense + n_sparse` points and smooths them.
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, n_dense: usize, n_sparse: usize) -> Result<Demo, JsError> {
        let params = SynthParams {
            n_dense,
            n_sparse,
            seed,
            ..SynthParams::default()
        };
        let raw = generate(&params, &ScoreRule::default()).map_err(js_err)?;
        let index = PointIndex::build(&raw.locations()).map_err(js_err)?;
        let data = knn_average(&raw, &index, SMOOTH_K.min(raw.len())).map_err(js_err)?;
        let locs = data.locations();
        let seg = segment_grid(&locs, DEFAULT_GRID, DEFAULT_GRID).map_err(js_err)?;
        let bounds = Bounds::enclosing(&locs, 0.02).map_err(js_err)?;
        Ok(Demo {
            data,
            seg,
            bounds,
            models: None,
            last: None,
        })
    }

    /// `[min_lon, min_lat, max_lon, max_lat]` of the view.
    pub fn bounds(&self) -> Vec<f64> {
        let b = &self.bounds;
        vec![b.min_lon, b.min_lat, b.max_lon, b.max_lat]
    }

    /// Interleaved lon, lat, dense flag (1 or 0) for every point.
    pub fn points(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.data.len() * 3);
        for p in &self.data.points {
            out.push(p.lon);
            out.push(p.lat);
            out.push(f64::from(u8::from(
                self.seg.region_of(p.location()) == Region::Dense,
            )));
        }
        out
    }

    /// Fits score, download and upload regressors with one setting.
    /// `method` is "fbkr" or "stbkr".
    pub fn configure(&mut self, method: &str, c: f64, k: usize) -> Result<(), JsError> {
        let kind: KernelKind = method.parse().map_err(js_err)?;
        let k = k.min(self.data.len());
        let params = RegionParams::uniform(KernelConfig::new(kind, c, k).map_err(js_err)?);
        let locs = self.data.locations();
        let fit = |y: Vec<f64>| {
            KernelModel::fit(&locs, &y, params, self.seg.clone(), Metric::Planar).map_err(js_err)
        };
        let pts = &self.data.points;
        self.models = Some(Models {
            score: fit(pts.iter().map(|p| p.score).collect())?,
            down: fit(pts.iter().map(|p| p.download_kbps).collect())?,
            up: fit(pts.iter().map(|p| p.upload_kbps).collect())?,
        });
        Ok(())
    }

    /// RGBA pixels of the predicted score, row 0 at the north edge.
    pub fn render(&mut self, rows: usize, cols: usize) -> Result<Vec<u8>, JsError> {
        let models = self
            .models
            .as_ref()
            .ok_or_else(|| JsError::new("call configure first"))?;
        let raster = Raster::evaluate(self.bounds, rows, cols, |xs| {
            models
                .score
                .predict_many(xs)
                .into_iter()
                .map(|p| p.value)
                .collect()
        })
        .map_err(js_err)?;
        let rgba = raster.to_rgba();
        self.last = Some(raster);
        Ok(rgba)
    }

    /// `[min, max]` of the last rendered raster.
    pub fn value_range(&self) -> Vec<f64> {
        match self.last.as_ref().and_then(|r| r.range()) {
            Some((lo, hi)) => vec![lo, hi],
            None => Vec::new(),
        }
    }

    /// JSON description of the fitted models at one location.
    pub fn query(&self, lon: f64, lat: f64) -> Result<String, JsError> {
        let m = self
            .models
            .as_ref()
            .ok_or_else(|| JsError::new("call configure first"))?;
        let x = [lon, lat];
        let score = m.score.predict(x);
        let down = m.down.predict(x).value / 1000.0;
        let up = m.up.predict(x).value / 1000.0;
        let tier = classify_service(down.max(0.0), up.max(0.0)).map_err(js_err)?;
        let cfg = m.score.params().get(m.score.region(x));
        let r_k = m.score.index().kth_distance(x, cfg.k).map_err(js_err)?;
        let h = m.score.bandwidth_at(x).unwrap_or(0.0);
        Ok(format!(
            "{{\"region\":\"{}\",\"score\":{},\"fallback\":{},\"r_k\":{},\"bandwidth\":{},\
             \"download_mbps\":{},\"upload_mbps\":{},\"tier\":\"{}\"}}",
            m.score.region(x),
            score.value,
            score.fallback.code(),
            r_k,
            h,
            down,
            up,
            tier.as_str()
        ))
    }
}

/// Service tier for speeds in Mbps: "served", "underserved" or "unserved".
#[wasm_bindgen]
pub fn classify(download_mbps: f64, upload_mbps: f64) -> Result<String, JsError> {
    classify_service(download_mbps, upload_mbps)
        .map(|t| t.as_str().to_string())
        .map_err(js_err)
}
