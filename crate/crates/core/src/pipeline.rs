//! End-to-end drivers: per-view volume estimation, novel camera placement
//! and novel-view synthesis.

use nalgebra::Vector3;
use thiserror::Error;

use crate::dpv::{
    build_cost_volume, costs_to_probabilities, crf_filter, disparity_range_from_depth_percentiles,
    CrfParams, DepthProbabilityVolume, DpvError, DEFAULT_TEMPERATURE, DEFAULT_WINDOW,
};
use crate::fusion::{default_novel_range, fuse_volumes, FusedVolume, Sampling};
use crate::geometry::{Camera, DisparityRange, GeometryError};
use crate::image::Image;
use crate::patches::{
    build_bundles, plan_patch_grid, ModeParams, PatchBundle, PatchError, DEFAULT_STRIDE,
};
use crate::render::{render_novel_view, RenderError, RenderParams, RenderedView};
use crate::scene::{Scene, SceneError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("scene has no disparity range and no ground-truth depth to derive one from")]
    NoRange,
    #[error("{0}")]
    Unsupported(String),
    #[error("expected {expected} volumes, found {found}")]
    VolumeCount { expected: usize, found: usize },
    #[error(transparent)]
    Dpv(#[from] DpvError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Patch(#[from] PatchError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateParams {
    pub levels: usize,
    pub window: usize,
    pub temperature: f64,
    /// `None` skips the cross-bilateral filter.
    pub crf: Option<CrfParams>,
}

impl Default for EstimateParams {
    fn default() -> Self {
        Self {
            levels: DisparityRange::DEFAULT_LEVELS,
            window: DEFAULT_WINDOW,
            temperature: DEFAULT_TEMPERATURE,
            crf: Some(CrfParams::default()),
        }
    }
}

/// The manifest's range if given, otherwise the depth percentiles of all
/// ground-truth depth maps pooled.
pub fn scene_disparity_range(
    scene: &Scene,
    levels: usize,
) -> Result<DisparityRange, PipelineError> {
    if let Some(r) = scene.manifest.disparity_range {
        return Ok(DisparityRange::new(r.d_min, r.d_max, levels)?);
    }
    let depths: Vec<f64> = scene
        .views
        .iter()
        .filter_map(|v| v.depth.as_ref())
        .flat_map(|d| d.finite_depths())
        .collect();
    if depths.is_empty() {
        return Err(PipelineError::NoRange);
    }
    Ok(disparity_range_from_depth_percentiles(&depths, levels)?)
}

/// Volume of view `index` matched against every other view.
pub fn estimate_volume(
    views: &[(&Image, &Camera)],
    index: usize,
    range: &DisparityRange,
    params: &EstimateParams,
) -> Result<DepthProbabilityVolume, PipelineError> {
    let others: Vec<(&Image, &Camera)> = views
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != index)
        .map(|(_, v)| *v)
        .collect();
    let costs = build_cost_volume(views[index], &others, range, params.window)?;
    let volume = costs_to_probabilities(&costs, params.temperature)?;
    Ok(match &params.crf {
        Some(crf) => crf_filter(&volume, views[index].0, crf)?,
        None => volume,
    })
}

pub fn estimate_volumes(
    scene: &Scene,
    params: &EstimateParams,
) -> Result<Vec<DepthProbabilityVolume>, PipelineError> {
    let range = scene_disparity_range(scene, params.levels)?;
    let views = scene.view_inputs();
    (0..views.len())
        .map(|i| {
            log::info!("estimating volume for view {i}");
            estimate_volume(&views, i, &range, params)
        })
        .collect()
}

/// How to place the novel camera relative to the inputs. All placements
/// keep the intrinsics, image size and orientation of view 0.
#[derive(Debug, Clone, PartialEq)]
pub enum NovelCamera {
    Explicit(Camera),
    /// `c0 + s (c1 - c0)` on the line through the first two views.
    Baseline(f64),
    /// `c0 - k (c1 - c0)`: `k` baselines beyond view 0, away from view 1.
    Extrapolate(f64),
    /// The centroid of the inputs moved by `m` along their mean principal
    /// axis.
    Dolly(f64),
}

impl NovelCamera {
    pub fn resolve(&self, cameras: &[&Camera]) -> Result<Camera, PipelineError> {
        let first = cameras
            .first()
            .ok_or_else(|| PipelineError::Unsupported("scene has no views".into()))?;
        let stereo = || {
            if cameras.len() < 2 {
                return Err(PipelineError::Unsupported(
                    "baseline placement needs at least two views".into(),
                ));
            }
            Ok((cameras[0].center(), cameras[1].center()))
        };
        Ok(match self {
            NovelCamera::Explicit(c) => c.clone(),
            NovelCamera::Baseline(s) => {
                let (c0, c1) = stereo()?;
                first.with_center(c0 + (c1 - c0) * *s)
            }
            NovelCamera::Extrapolate(k) => {
                let (c0, c1) = stereo()?;
                first.with_center(c0 - (c1 - c0) * *k)
            }
            NovelCamera::Dolly(m) => {
                let n = cameras.len() as f64;
                let centroid = cameras.iter().map(|c| c.center()).sum::<Vector3<f64>>() / n;
                let axis = cameras
                    .iter()
                    .map(|c| c.principal_axis())
                    .sum::<Vector3<f64>>()
                    .try_normalize(1e-12)
                    .ok_or_else(|| {
                        PipelineError::Unsupported("principal axes cancel out".into())
                    })?;
                first.with_center(centroid + axis * *m)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesizeParams {
    pub render: RenderParams,
    pub sampling: Sampling,
    /// Levels of the novel volume; `None` keeps the inputs' count.
    pub levels: Option<usize>,
    pub stride: usize,
    pub modes: ModeParams,
}

impl Default for SynthesizeParams {
    fn default() -> Self {
        Self {
            render: RenderParams::default(),
            sampling: Sampling::default(),
            levels: None,
            stride: DEFAULT_STRIDE,
            modes: ModeParams::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Synthesis {
    pub fused: FusedVolume,
    pub rendered: RenderedView,
    pub bundles: Vec<PatchBundle>,
}

/// Fuses the input volumes into `novel`, renders the initial view and
/// builds patch bundles. Bundles are skipped for images smaller than a
/// patch.
pub fn synthesize(
    inputs: &[(&Image, &Camera)],
    volumes: &[DepthProbabilityVolume],
    novel: &Camera,
    params: &SynthesizeParams,
) -> Result<Synthesis, PipelineError> {
    if volumes.len() != inputs.len() || volumes.is_empty() {
        return Err(PipelineError::VolumeCount {
            expected: inputs.len(),
            found: volumes.len(),
        });
    }
    let levels = params.levels.unwrap_or(volumes[0].levels());
    let range = default_novel_range(volumes, levels)?;
    let fused = fuse_volumes(volumes, novel, &range, params.sampling);
    if fused.unobserved_count() > 0 {
        log::info!(
            "{} novel rays are not observed by any input",
            fused.unobserved_count()
        );
    }
    let rendered = render_novel_view(&fused.volume, inputs, &params.render)?;
    let bundles = match plan_patch_grid(novel.width(), novel.height(), params.stride) {
        Ok(grid) => build_bundles(&rendered, &fused.volume, inputs, &grid, &params.modes)?,
        Err(PatchError::TooSmall { .. }) => {
            log::warn!("image smaller than one patch; no bundles written");
            Vec::new()
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Synthesis {
        fused,
        rendered,
        bundles,
    })
}
