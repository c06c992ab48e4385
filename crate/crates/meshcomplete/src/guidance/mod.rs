//! Fixed-camera depth rendering and pluggable inpainting providers.
//!
//! The rendered quantity is depth along the view axis of a fixed
//! orthographic camera. Providers fill the to-inpaint pixels of an observed
//! depth image: the oracle reads the ground-truth render (a test upper
//! bound), the mean-face provider uses the dataset mean, and the
//! nearest-neighbor provider picks the closest training render.

mod render;

pub use render::{render_depth, render_depth_backward, RenderResult};

use crate::mesh::TriMesh;
use nalgebra::{Point3, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("depth images have different resolutions: {0}x{1} vs {2}x{3}")]
    ResolutionMismatch(usize, usize, usize, usize),
    #[error("no overlapping valid pixels between the two images")]
    NoOverlap,
    #[error("nearest-neighbor provider needs a nonempty training set")]
    EmptyTrainingSet,
    #[error("mask length {got} does not match image size {expected}")]
    MaskMismatch { got: usize, expected: usize },
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("png encode error: {0}")]
    Png(String),
}

/// Fixed orthographic camera: square image plane of `extent` mm, looking
/// along `view`.
#[derive(Debug, Clone)]
pub struct Camera {
    view: Vector3<f64>,
    up: Vector3<f64>,
    center: Point3<f64>,
    pub extent: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn new(
        view: Vector3<f64>,
        up: Vector3<f64>,
        center: Point3<f64>,
        extent: f64,
        width: usize,
        height: usize,
    ) -> Camera {
        let view = view.normalize();
        let up = (up - view * view.dot(&up)).normalize();
        Camera {
            view,
            up,
            center,
            extent,
            width,
            height,
        }
    }

    /// The default frontal view: looking along -z from a 200 mm standoff,
    /// y up.
    pub fn frontal(resolution: usize, extent: f64) -> Camera {
        Camera::new(
            Vector3::new(0.0, 0.0, -1.0),
            Vector3::new(0.0, 1.0, 0.0),
            Point3::new(0.0, 0.0, 200.0),
            extent,
            resolution,
            resolution,
        )
    }

    pub fn view(&self) -> Vector3<f64> {
        self.view
    }

    pub fn up_ortho(&self) -> Vector3<f64> {
        self.up
    }

    pub fn right(&self) -> Vector3<f64> {
        self.view.cross(&self.up)
    }

    pub fn origin(&self) -> Point3<f64> {
        self.center
    }

    pub fn x_of_pixel(&self, px: i64) -> f64 {
        (px as f64 + 0.5) * self.extent / self.width as f64 - self.extent / 2.0
    }

    pub fn y_of_pixel(&self, py: i64) -> f64 {
        self.extent / 2.0 - (py as f64 + 0.5) * self.extent / self.height as f64
    }

    pub fn pixel_of_x(&self, x: f64) -> i64 {
        (((x + self.extent / 2.0) / self.extent) * self.width as f64 - 0.5).round() as i64
    }

    pub fn pixel_of_y(&self, y: f64) -> i64 {
        (((self.extent / 2.0 - y) / self.extent) * self.height as f64 - 0.5).round() as i64
    }
}

/// A depth map in mm along the camera view axis. Invalid (uncovered)
/// pixels carry the sentinel and are excluded from every loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, `height` rows of `width`.
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthImage {
    pub const INVALID: f64 = f64::INFINITY;

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn len(&self) -> usize {
        self.depth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.depth.is_empty()
    }
}

/// Pixels to inpaint: invalid in the observation but covered by the
/// reference render (the initialized fit).
pub fn inpaint_mask(observed: &DepthImage, reference: &DepthImage) -> Vec<bool> {
    observed
        .valid
        .iter()
        .zip(&reference.valid)
        .map(|(&obs, &reference)| !obs && reference)
        .collect()
}

/// Fills masked pixels of an observed depth image.
pub trait GuidanceProvider: Send + Sync {
    fn inpaint(&self, observed: &DepthImage, mask: &[bool]) -> Result<DepthImage, GuidanceError>;
}

fn check_mask(observed: &DepthImage, mask: &[bool]) -> Result<(), GuidanceError> {
    if mask.len() != observed.len() {
        return Err(GuidanceError::MaskMismatch {
            got: mask.len(),
            expected: observed.len(),
        });
    }
    Ok(())
}

/// Fills masked pixels from a single fixed render.
fn fill_from(observed: &DepthImage, mask: &[bool], source: &DepthImage) -> DepthImage {
    let mut out = observed.clone();
    for i in 0..out.len() {
        if mask[i] && source.valid[i] {
            out.depth[i] = source.depth[i];
            out.valid[i] = true;
        }
    }
    out
}

/// Upper-bound provider: inpaints from the ground-truth render.
pub struct OracleProvider {
    render: DepthImage,
}

impl OracleProvider {
    pub fn new(ground_truth: &TriMesh, cam: &Camera) -> OracleProvider {
        OracleProvider {
            render: render_depth(ground_truth, cam).image,
        }
    }
}

impl GuidanceProvider for OracleProvider {
    fn inpaint(&self, observed: &DepthImage, mask: &[bool]) -> Result<DepthImage, GuidanceError> {
        check_mask(observed, mask)?;
        Ok(fill_from(observed, mask, &self.render))
    }
}

/// Fills from the dataset mean face.
pub struct MeanFaceProvider {
    render: DepthImage,
}

impl MeanFaceProvider {
    pub fn new(mean_mesh: &TriMesh, cam: &Camera) -> MeanFaceProvider {
        MeanFaceProvider {
            render: render_depth(mean_mesh, cam).image,
        }
    }
}

impl GuidanceProvider for MeanFaceProvider {
    fn inpaint(&self, observed: &DepthImage, mask: &[bool]) -> Result<DepthImage, GuidanceError> {
        check_mask(observed, mask)?;
        Ok(fill_from(observed, mask, &self.render))
    }
}

/// Picks the training render closest to the observation (mean absolute
/// depth difference over shared valid pixels, lowest index on ties) and
/// fills from it.
pub struct NearestNeighborProvider {
    renders: Vec<DepthImage>,
}

impl NearestNeighborProvider {
    pub fn new(
        training: &[TriMesh],
        cam: &Camera,
    ) -> Result<NearestNeighborProvider, GuidanceError> {
        if training.is_empty() {
            return Err(GuidanceError::EmptyTrainingSet);
        }
        Ok(NearestNeighborProvider {
            renders: training.iter().map(|m| render_depth(m, cam).image).collect(),
        })
    }

    pub fn from_renders(
        renders: Vec<DepthImage>,
    ) -> Result<NearestNeighborProvider, GuidanceError> {
        if renders.is_empty() {
            return Err(GuidanceError::EmptyTrainingSet);
        }
        Ok(NearestNeighborProvider { renders })
    }

    /// Index of the closest render.
    pub fn select(&self, observed: &DepthImage) -> usize {
        let mut best = 0usize;
        let mut best_score = f64::INFINITY;
        for (i, render) in self.renders.iter().enumerate() {
            let mut sum = 0.0;
            let mut count = 0usize;
            for j in 0..observed.len() {
                if observed.valid[j] && render.valid[j] {
                    sum += (observed.depth[j] - render.depth[j]).abs();
                    count += 1;
                }
            }
            let score = if count == 0 {
                f64::INFINITY
            } else {
                sum / count as f64
            };
            if score < best_score {
                best_score = score;
                best = i;
            }
        }
        best
    }
}

impl GuidanceProvider for NearestNeighborProvider {
    fn inpaint(&self, observed: &DepthImage, mask: &[bool]) -> Result<DepthImage, GuidanceError> {
        check_mask(observed, mask)?;
        let chosen = &self.renders[self.select(observed)];
        Ok(fill_from(observed, mask, chosen))
    }
}

/// Depth-image MSE over pixels valid in both, with the gradient with
/// respect to the first image's depths.
#[derive(Debug, Clone)]
pub struct DepthMse {
    pub value: f64,
    pub shared_pixels: usize,
    /// d(value)/d(fit depth) per pixel (zero at unshared pixels).
    pub grad_fit: Vec<f64>,
}

/// Mean squared depth difference over pixels valid in both images.
pub fn inp_loss(fit: &DepthImage, guide: &DepthImage) -> Result<DepthMse, GuidanceError> {
    if fit.width != guide.width || fit.height != guide.height {
        return Err(GuidanceError::ResolutionMismatch(
            fit.width,
            fit.height,
            guide.width,
            guide.height,
        ));
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..fit.len() {
        if fit.valid[i] && guide.valid[i] {
            let d = fit.depth[i] - guide.depth[i];
            sum += d * d;
            count += 1;
        }
    }
    if count == 0 {
        return Err(GuidanceError::NoOverlap);
    }
    let mut grad_fit = vec![0.0; fit.len()];
    let scale = 2.0 / count as f64;
    for i in 0..fit.len() {
        if fit.valid[i] && guide.valid[i] {
            grad_fit[i] = scale * (fit.depth[i] - guide.depth[i]);
        }
    }
    Ok(DepthMse {
        value: sum / count as f64,
        shared_pixels: count,
        grad_fit,
    })
}

/// Debug dump: 16-bit grayscale PNG (normalized over the valid depth range,
/// invalid pixels black) plus the raw float32 depths with a small header
/// (magic, width, height; invalid pixels are +inf).
pub fn write_debug_dump(image: &DepthImage, base: &std::path::Path) -> Result<(), GuidanceError> {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (d, &ok) in image.depth.iter().zip(&image.valid) {
        if ok {
            lo = lo.min(*d);
            hi = hi.max(*d);
        }
    }
    let range = (hi - lo).max(1e-9);
    let pixels: Vec<u16> = image
        .depth
        .iter()
        .zip(&image.valid)
        .map(|(d, &ok)| {
            if ok {
                (1.0 + (d - lo) / range * 65534.0) as u16
            } else {
                0
            }
        })
        .collect();
    let png_path = base.with_extension("png");
    let buffer: image::ImageBuffer<image::Luma<u16>, Vec<u16>> =
        image::ImageBuffer::from_vec(image.width as u32, image.height as u32, pixels)
            .expect("pixel buffer size");
    buffer
        .save(&png_path)
        .map_err(|e| GuidanceError::Png(e.to_string()))?;

    let raw_path = base.with_extension("f32");
    let mut bytes = Vec::with_capacity(12 + image.len() * 4);
    bytes.extend_from_slice(b"MCDP");
    bytes.extend_from_slice(&(image.width as u32).to_le_bytes());
    bytes.extend_from_slice(&(image.height as u32).to_le_bytes());
    for (d, &ok) in image.depth.iter().zip(&image.valid) {
        let v = if ok { *d as f32 } else { f32::INFINITY };
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(&raw_path, bytes).map_err(|source| GuidanceError::Write {
        path: raw_path.display().to_string(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::make_template;

    fn small_camera() -> Camera {
        Camera::frontal(32, 200.0)
    }

    fn constant_image(cam: &Camera, depth: f64) -> DepthImage {
        DepthImage {
            width: cam.width,
            height: cam.height,
            depth: vec![depth; cam.width * cam.height],
            valid: vec![true; cam.width * cam.height],
        }
    }

    #[test]
    fn template_render_covers_a_sane_fraction() {
        let cam = Camera::frontal(128, 180.0);
        let result = render_depth(&make_template(), &cam);
        let fraction = result.image.valid_count() as f64 / result.image.len() as f64;
        assert!(
            fraction > 0.2 && fraction < 0.9,
            "covered fraction {fraction}"
        );
    }

    #[test]
    fn inp_loss_identical_is_zero_and_symmetric() {
        let cam = small_camera();
        let a = constant_image(&cam, 10.0);
        assert_eq!(inp_loss(&a, &a).unwrap().value, 0.0);

        let b = constant_image(&cam, 12.5);
        let ab = inp_loss(&a, &b).unwrap().value;
        let ba = inp_loss(&b, &a).unwrap().value;
        assert_eq!(ab, ba);
        // Constant offset delta on all shared pixels -> delta^2.
        assert!((ab - 6.25).abs() < 1e-12);
    }

    #[test]
    fn inp_loss_requires_overlap_and_matching_resolution() {
        let cam = small_camera();
        let mut a = constant_image(&cam, 1.0);
        for v in &mut a.valid {
            *v = false;
        }
        let b = constant_image(&cam, 2.0);
        assert!(matches!(inp_loss(&a, &b), Err(GuidanceError::NoOverlap)));

        let c = constant_image(&Camera::frontal(16, 200.0), 2.0);
        assert!(matches!(
            inp_loss(&b, &c),
            Err(GuidanceError::ResolutionMismatch(..))
        ));
    }

    #[test]
    fn oracle_provider_fills_only_the_mask() {
        let cam = small_camera();
        let template = make_template();
        let provider = OracleProvider::new(&template, &cam);
        let gt_render = render_depth(&template, &cam).image;

        // Observed: left half of the gt render masked out.
        let mut observed = gt_render.clone();
        for py in 0..cam.height {
            for px in 0..cam.width / 2 {
                let i = py * cam.width + px;
                observed.valid[i] = false;
                observed.depth[i] = DepthImage::INVALID;
            }
        }

        // Empty mask: output equals observed.
        let empty = vec![false; observed.len()];
        assert_eq!(provider.inpaint(&observed, &empty).unwrap(), observed);

        // Full mask: every invalid-but-covered pixel restored.
        let mask = inpaint_mask(&observed, &gt_render);
        let filled = provider.inpaint(&observed, &mask).unwrap();
        assert_eq!(filled.depth, gt_render.depth);

        // Mixed: pixelwise selection, no blending.
        for i in 0..filled.len() {
            if observed.valid[i] {
                assert_eq!(filled.depth[i], observed.depth[i]);
            }
        }
    }

    #[test]
    fn nn_provider_selects_the_exact_match() {
        let cam = small_camera();
        let template = make_template();
        let mut narrow = template.clone();
        for v in &mut narrow.vertices {
            v.x *= 0.8;
        }
        let mut deep = template.clone();
        for v in &mut deep.vertices {
            v.z *= 1.2;
        }
        let provider =
            NearestNeighborProvider::new(&[narrow, template.clone(), deep], &cam).unwrap();
        let observed = render_depth(&template, &cam).image;
        assert_eq!(provider.select(&observed), 1);
    }

    #[test]
    fn nn_provider_breaks_ties_to_lower_index() {
        let cam = small_camera();
        let template = make_template();
        let provider =
            NearestNeighborProvider::new(&[template.clone(), template.clone()], &cam).unwrap();
        let observed = render_depth(&template, &cam).image;
        assert_eq!(provider.select(&observed), 0);
    }

    #[test]
    fn empty_training_set_is_rejected() {
        let cam = small_camera();
        assert!(matches!(
            NearestNeighborProvider::new(&[], &cam),
            Err(GuidanceError::EmptyTrainingSet)
        ));
    }

    #[test]
    fn meanface_on_empty_mask_is_identity() {
        let cam = small_camera();
        let template = make_template();
        let provider = MeanFaceProvider::new(&template, &cam);
        let observed = render_depth(&template, &cam).image;
        let empty = vec![false; observed.len()];
        assert_eq!(provider.inpaint(&observed, &empty).unwrap(), observed);
    }

    #[test]
    fn debug_dump_writes_png_and_raw() {
        let dir = tempfile::tempdir().unwrap();
        let cam = small_camera();
        let image = render_depth(&make_template(), &cam).image;
        let base = dir.path().join("depth");
        write_debug_dump(&image, &base).unwrap();
        assert!(base.with_extension("png").exists());
        let raw = std::fs::read(base.with_extension("f32")).unwrap();
        assert_eq!(&raw[..4], b"MCDP");
        assert_eq!(raw.len(), 12 + image.len() * 4);
    }
}
