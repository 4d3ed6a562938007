//! Quantitative indicators computed from segmentation masks, label volumes
//! and body measurements.
//!
//! All functions are pure. Fundus masks use 1 = disc, 2 = cup, and cup pixels
//! count as disc pixels. Label volumes use 1 = myocardium, 2 = LV cavity, with
//! the long axis along z.

use serde::{Deserialize, Serialize};

use crate::imaging::{label2d, label3d, CropRegion, Mask2D, Volume3D};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("mask has no disc pixels")]
    EmptyDisc,
    #[error("{0} is empty")]
    EmptyStructure(&'static str),
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

fn is_disc(label: u8) -> bool {
    label == label2d::DISC || label == label2d::CUP
}

fn is_cup(label: u8) -> bool {
    label == label2d::CUP
}

/// Inclusive (min, max) row span of pixels matching `pred`.
fn row_span(mask: &Mask2D, pred: impl Fn(u8) -> bool) -> Option<(usize, usize)> {
    let w = mask.width();
    let mut span: Option<(usize, usize)> = None;
    for (i, &l) in mask.labels().iter().enumerate() {
        if pred(l) {
            let row = i / w;
            span = Some(match span {
                None => (row, row),
                Some((lo, hi)) => (lo.min(row), hi.max(row)),
            });
        }
    }
    span
}

/// Vertical extent of the disc in pixels (inclusive row span).
pub fn disc_vertical_extent(mask: &Mask2D) -> Result<usize, MetricError> {
    row_span(mask, is_disc)
        .map(|(lo, hi)| hi - lo + 1)
        .ok_or(MetricError::EmptyDisc)
}

/// Vertical cup-to-disc ratio. A mask without cup pixels yields 0.
pub fn compute_vcdr(mask: &Mask2D) -> Result<f64, MetricError> {
    let disc = disc_vertical_extent(mask)?;
    let cup = row_span(mask, is_cup).map_or(0, |(lo, hi)| hi - lo + 1);
    Ok(cup as f64 / disc as f64)
}

/// Which image side is nasal. Right eyes have the nasal side at −x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Laterality {
    #[default]
    Right,
    Left,
}

/// Neuroretinal rim thickness in pixels along four axis-aligned rays.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RimThickness {
    pub superior: u32,
    pub inferior: u32,
    pub nasal: u32,
    pub temporal: u32,
}

impl RimThickness {
    pub fn min(&self) -> u32 {
        self.superior.min(self.inferior).min(self.nasal).min(self.temporal)
    }

    pub fn directions(&self) -> [(&'static str, u32); 4] {
        [
            ("superior", self.superior),
            ("inferior", self.inferior),
            ("nasal", self.nasal),
            ("temporal", self.temporal),
        ]
    }
}

/// Rounded mean position of disc pixels.
pub fn disc_centroid(mask: &Mask2D) -> Result<(usize, usize), MetricError> {
    let w = mask.width();
    let (mut sx, mut sy, mut n) = (0u64, 0u64, 0u64);
    for (i, &l) in mask.labels().iter().enumerate() {
        if is_disc(l) {
            sx += (i % w) as u64;
            sy += (i / w) as u64;
            n += 1;
        }
    }
    if n == 0 {
        return Err(MetricError::EmptyDisc);
    }
    Ok((((sx + n / 2) / n) as usize, ((sy + n / 2) / n) as usize))
}

fn ray_thickness(mask: &Mask2D, cx: usize, cy: usize, dx: isize, dy: isize) -> u32 {
    let (mut last_cup, mut last_disc) = (0u32, None::<u32>);
    let (mut x, mut y, mut d) = (cx as isize, cy as isize, 0u32);
    while x >= 0 && y >= 0 && (x as usize) < mask.width() && (y as usize) < mask.height() {
        let l = mask.get(x as usize, y as usize);
        if is_disc(l) {
            last_disc = Some(d);
        }
        if is_cup(l) {
            last_cup = d;
        }
        x += dx;
        y += dy;
        d += 1;
    }
    last_disc.map_or(0, |disc| disc.saturating_sub(last_cup))
}

/// Distance from the last cup pixel to the last disc pixel along each ray
/// from the disc centroid. A ray that misses the cup measures from the centroid.
pub fn compute_rim_thickness(mask: &Mask2D, laterality: Laterality) -> Result<RimThickness, MetricError> {
    if row_span(mask, is_disc).is_none() {
        return Err(MetricError::EmptyStructure("optic disc"));
    }
    if row_span(mask, is_cup).is_none() {
        return Err(MetricError::EmptyStructure("optic cup"));
    }
    let (cx, cy) = disc_centroid(mask)?;
    let minus_x = ray_thickness(mask, cx, cy, -1, 0);
    let plus_x = ray_thickness(mask, cx, cy, 1, 0);
    let (nasal, temporal) = match laterality {
        Laterality::Right => (minus_x, plus_x),
        Laterality::Left => (plus_x, minus_x),
    };
    Ok(RimThickness {
        superior: ray_thickness(mask, cx, cy, 0, -1),
        inferior: ray_thickness(mask, cx, cy, 0, 1),
        nasal,
        temporal,
    })
}

/// Thinnest rim direction relative to the disc's vertical extent.
pub fn rim_ratio(rim: &RimThickness, disc_extent: usize) -> Result<f64, MetricError> {
    if disc_extent == 0 {
        return Err(MetricError::EmptyDisc);
    }
    Ok(f64::from(rim.min()) / disc_extent as f64)
}

pub const DEFAULT_MARGIN_FACTOR: f64 = 1.5;

/// Disc bounding box scaled about its centre and clamped to the image.
pub fn crop_peripapillary(mask: &Mask2D, margin_factor: f64) -> Result<CropRegion, MetricError> {
    if !(margin_factor > 0.0 && margin_factor.is_finite()) {
        return Err(MetricError::InvalidInput(format!("margin factor {margin_factor}")));
    }
    let w = mask.width();
    let mut bbox: Option<(usize, usize, usize, usize)> = None;
    for (i, &l) in mask.labels().iter().enumerate() {
        if is_disc(l) {
            let (x, y) = (i % w, i / w);
            bbox = Some(match bbox {
                None => (x, y, x, y),
                Some((x0, y0, x1, y1)) => (x0.min(x), y0.min(y), x1.max(x), y1.max(y)),
            });
        }
    }
    let (x0, y0, xmax, ymax) = bbox.ok_or(MetricError::EmptyDisc)?;
    let scale = |lo: usize, hi: usize, limit: usize| {
        let (lo, hi) = (lo as f64, hi as f64);
        let centre = (lo + hi) / 2.0;
        let half = (hi - lo) / 2.0 * margin_factor;
        let a = (centre - half).floor().max(0.0) as usize;
        let b = ((centre + half).ceil() as usize).min(limit);
        (a, b.max(a + 1).min(limit))
    };
    let (cx0, cx1) = scale(x0, xmax + 1, mask.width());
    let (cy0, cy1) = scale(y0, ymax + 1, mask.height());
    Ok(CropRegion { x0: cx0, y0: cy0, x1: cx1, y1: cy1 })
}

pub fn voxel_count(vol: &Volume3D, label: u8) -> usize {
    vol.labels.iter().filter(|&&l| l == label).count()
}

/// Volume of one label in millilitres.
pub fn compute_volume(vol: &Volume3D, label: u8) -> Result<f64, MetricError> {
    if label != label3d::MYOCARDIUM && label != label3d::LV_CAVITY {
        return Err(MetricError::InvalidInput(format!("label {label} is not 1 or 2")));
    }
    let voxel_mm3 = vol.spacing[0] * vol.spacing[1] * vol.spacing[2];
    Ok(voxel_count(vol, label) as f64 * voxel_mm3 / 1000.0)
}

/// Ejection fraction in percent from end-diastolic and end-systolic volumes.
pub fn compute_lvef(edv: f64, esv: f64) -> Result<f64, MetricError> {
    if !(edv > 0.0) {
        return Err(MetricError::InvalidVolume(format!("end-diastolic volume {edv} must be positive")));
    }
    if !(esv >= 0.0) || esv > edv {
        return Err(MetricError::InvalidVolume(format!(
            "end-systolic volume {esv} must lie in [0, {edv}]"
        )));
    }
    Ok(100.0 * (edv - esv) / edv)
}

/// Largest in-plane cavity extent (mm) on the mid slice of the cavity's z span.
pub fn compute_lv_diameter(vol: &Volume3D) -> Result<f64, MetricError> {
    let [nx, ny, nz] = vol.dims;
    let mut z_span: Option<(usize, usize)> = None;
    for z in 0..nz {
        let slice = &vol.labels[z * nx * ny..(z + 1) * nx * ny];
        if slice.contains(&label3d::LV_CAVITY) {
            z_span = Some(z_span.map_or((z, z), |(lo, _)| (lo, z)));
        }
    }
    let (zlo, zhi) = z_span.ok_or(MetricError::EmptyStructure("LV cavity"))?;
    let z = (zlo + zhi) / 2;
    let (mut x0, mut x1, mut y0, mut y1) = (usize::MAX, 0, usize::MAX, 0);
    for y in 0..ny {
        for x in 0..nx {
            if vol.get(x, y, z) == label3d::LV_CAVITY {
                x0 = x0.min(x);
                x1 = x1.max(x);
                y0 = y0.min(y);
                y1 = y1.max(y);
            }
        }
    }
    if x0 == usize::MAX {
        // mid slice can fall in a gap of a non-convex cavity
        return Err(MetricError::EmptyStructure("LV cavity mid slice"));
    }
    let dx = (x1 - x0 + 1) as f64 * vol.spacing[0];
    let dy = (y1 - y0 + 1) as f64 * vol.spacing[1];
    Ok(dx.max(dy))
}

/// Constants for the LV mass index; defaults are myocardial density 1.05 g/mL
/// and the Du Bois body-surface-area formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MassIndexParams {
    pub density_g_per_ml: f64,
    pub bsa_coefficient: f64,
    pub height_exponent: f64,
    pub weight_exponent: f64,
}

impl Default for MassIndexParams {
    fn default() -> Self {
        Self {
            density_g_per_ml: 1.05,
            bsa_coefficient: 0.007184,
            height_exponent: 0.725,
            weight_exponent: 0.425,
        }
    }
}

impl MassIndexParams {
    pub fn body_surface_area(&self, height_cm: f64, weight_kg: f64) -> f64 {
        self.bsa_coefficient * height_cm.powf(self.height_exponent) * weight_kg.powf(self.weight_exponent)
    }
}

pub fn compute_lv_mass_index(myo_volume_ml: f64, height_cm: f64, weight_kg: f64) -> Result<f64, MetricError> {
    compute_lv_mass_index_with(&MassIndexParams::default(), myo_volume_ml, height_cm, weight_kg)
}

pub fn compute_lv_mass_index_with(
    params: &MassIndexParams,
    myo_volume_ml: f64,
    height_cm: f64,
    weight_kg: f64,
) -> Result<f64, MetricError> {
    for (name, v) in [("myocardial volume", myo_volume_ml), ("height", height_cm), ("weight", weight_kg)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(MetricError::InvalidInput(format!("{name} must be positive, got {v}")));
        }
    }
    let mass = myo_volume_ml * params.density_g_per_ml;
    Ok(mass / params.body_surface_area(height_cm, weight_kg))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disk(mask: &mut Mask2D, cx: i64, cy: i64, r: i64, label: u8) {
        for y in 0..mask.height() as i64 {
            for x in 0..mask.width() as i64 {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    mask.set(x as usize, y as usize, label);
                }
            }
        }
    }

    fn rect(mask: &mut Mask2D, x0: usize, y0: usize, x1: usize, y1: usize, label: u8) {
        for y in y0..=y1 {
            for x in x0..=x1 {
                mask.set(x, y, label);
            }
        }
    }

    #[test]
    fn vcdr_row_extents() {
        let mut m = Mask2D::empty(100, 100);
        rect(&mut m, 20, 10, 70, 59, label2d::DISC);
        rect(&mut m, 30, 25, 60, 44, label2d::CUP);
        assert_eq!(compute_vcdr(&m).unwrap(), 0.4);
    }

    #[test]
    fn vcdr_conventions() {
        let mut m = Mask2D::empty(20, 20);
        rect(&mut m, 2, 2, 10, 10, label2d::CUP);
        assert_eq!(compute_vcdr(&m).unwrap(), 1.0);
        let mut m = Mask2D::empty(20, 20);
        rect(&mut m, 2, 2, 10, 10, label2d::DISC);
        assert_eq!(compute_vcdr(&m).unwrap(), 0.0);
        assert_eq!(compute_vcdr(&Mask2D::empty(5, 5)), Err(MetricError::EmptyDisc));
    }

    #[test]
    fn rim_concentric_disks() {
        let mut m = Mask2D::empty(160, 160);
        disk(&mut m, 80, 80, 50, label2d::DISC);
        disk(&mut m, 80, 80, 20, label2d::CUP);
        let rim = compute_rim_thickness(&m, Laterality::Right).unwrap();
        for (_, t) in rim.directions() {
            assert!((29..=31).contains(&t), "{rim:?}");
        }
    }

    #[test]
    fn rim_offset_cup() {
        let mut m = Mask2D::empty(160, 160);
        disk(&mut m, 80, 80, 50, label2d::DISC);
        disk(&mut m, 80, 70, 20, label2d::CUP);
        let rim = compute_rim_thickness(&m, Laterality::Right).unwrap();
        assert!((rim.superior as i64 - 20).abs() <= 1, "{rim:?}");
        assert!((rim.inferior as i64 - 40).abs() <= 1, "{rim:?}");
    }

    #[test]
    fn rim_contact_is_zero() {
        let mut m = Mask2D::empty(160, 160);
        disk(&mut m, 80, 80, 50, label2d::DISC);
        disk(&mut m, 80, 60, 30, label2d::CUP);
        let rim = compute_rim_thickness(&m, Laterality::Right).unwrap();
        assert_eq!(rim.superior, 0);
    }

    #[test]
    fn rim_laterality_swaps_horizontal() {
        let mut m = Mask2D::empty(160, 160);
        disk(&mut m, 80, 80, 50, label2d::DISC);
        disk(&mut m, 90, 80, 20, label2d::CUP);
        let right = compute_rim_thickness(&m, Laterality::Right).unwrap();
        let left = compute_rim_thickness(&m, Laterality::Left).unwrap();
        assert_eq!(right.nasal, left.temporal);
        assert_eq!(right.temporal, left.nasal);
        assert_eq!(right.temporal, 20);
        assert_eq!(right.nasal, 40);
    }

    #[test]
    fn rim_requires_both_structures() {
        let mut m = Mask2D::empty(40, 40);
        disk(&mut m, 20, 20, 10, label2d::DISC);
        assert_eq!(compute_rim_thickness(&m, Laterality::Right), Err(MetricError::EmptyStructure("optic cup")));
        assert!(compute_rim_thickness(&Mask2D::empty(4, 4), Laterality::Right).is_err());
    }

    #[test]
    fn crop_scales_about_centre() {
        let mut m = Mask2D::empty(200, 200);
        rect(&mut m, 40, 40, 59, 59, label2d::DISC);
        let c = crop_peripapillary(&m, 1.5).unwrap();
        assert_eq!(c, CropRegion { x0: 35, y0: 35, x1: 65, y1: 65 });
        let c = crop_peripapillary(&m, 1.0).unwrap();
        assert_eq!(c, CropRegion { x0: 40, y0: 40, x1: 60, y1: 60 });
    }

    #[test]
    fn crop_clamps_at_corner() {
        let mut m = Mask2D::empty(50, 40);
        rect(&mut m, 0, 0, 9, 9, label2d::DISC);
        let c = crop_peripapillary(&m, 2.0).unwrap();
        assert_eq!((c.x0, c.y0), (0, 0));
        assert!(c.x1 <= 50 && c.y1 <= 40);
        let mut m = Mask2D::empty(50, 40);
        rect(&mut m, 40, 30, 49, 39, label2d::DISC);
        let c = crop_peripapillary(&m, 2.0).unwrap();
        assert_eq!((c.x1, c.y1), (50, 40));
        assert_eq!(crop_peripapillary(&Mask2D::empty(3, 3), 1.5), Err(MetricError::EmptyDisc));
    }

    #[test]
    fn volume_unit_conversion() {
        let mut v = Volume3D::zeros([10, 10, 10], [1.0, 1.0, 1.0]).unwrap();
        v.labels.iter_mut().for_each(|l| *l = label3d::LV_CAVITY);
        assert_eq!(compute_volume(&v, label3d::LV_CAVITY).unwrap(), 1.0);
        assert_eq!(compute_volume(&v, label3d::MYOCARDIUM).unwrap(), 0.0);
        assert!(compute_volume(&v, 3).is_err());
    }

    #[test]
    fn volume_half_mm_spacing() {
        let mut v = Volume3D::zeros([60, 50, 40], [0.5, 0.5, 0.5]).unwrap();
        v.labels.iter_mut().for_each(|l| *l = label3d::LV_CAVITY);
        assert_eq!(v.labels.len(), 120_000);
        assert_eq!(compute_volume(&v, label3d::LV_CAVITY).unwrap(), 15.0);
    }

    #[test]
    fn lvef_cases() {
        assert_eq!(compute_lvef(120.0, 60.0).unwrap(), 50.0);
        assert_eq!(compute_lvef(80.0, 80.0).unwrap(), 0.0);
        assert!((compute_lvef(130.0, 49.4).unwrap() - 62.0).abs() < 1e-9);
        assert!(compute_lvef(0.0, 0.0).is_err());
        assert!(compute_lvef(50.0, 60.0).is_err());
    }

    #[test]
    fn lv_diameter_box_and_voxel() {
        let mut v = Volume3D::zeros([60, 50, 80], [1.0, 1.0, 1.0]).unwrap();
        for z in 10..70 {
            for y in 5..35 {
                for x in 10..50 {
                    v.set(x, y, z, label3d::LV_CAVITY);
                }
            }
        }
        assert_eq!(compute_lv_diameter(&v).unwrap(), 40.0);

        let mut v = Volume3D::zeros([5, 5, 5], [0.7, 0.9, 1.0]).unwrap();
        v.set(2, 2, 2, label3d::LV_CAVITY);
        assert_eq!(compute_lv_diameter(&v).unwrap(), 0.9);
        assert_eq!(
            compute_lv_diameter(&Volume3D::zeros([2, 2, 2], [1.0; 3]).unwrap()),
            Err(MetricError::EmptyStructure("LV cavity"))
        );
    }

    #[test]
    fn lvmi_reference_value() {
        let lvmi = compute_lv_mass_index(150.0, 180.0, 75.0).unwrap();
        assert!((lvmi - 81.06).abs() < 0.05, "{lvmi}");
        let tiny = compute_lv_mass_index(0.0001, 170.0, 70.0).unwrap();
        assert!(tiny > 0.0 && tiny < 1e-3);
        assert!(compute_lv_mass_index(0.0, 170.0, 70.0).is_err());
        assert!(compute_lv_mass_index(100.0, -1.0, 70.0).is_err());
    }

    #[test]
    fn lvmi_unit_bsa() {
        // bisect for the weight giving BSA = 1 at 160 cm
        let (mut lo, mut hi) = (1.0f64, 200.0f64);
        let bsa = |w: f64| 0.007184 * 160f64.powf(0.725) * w.powf(0.425);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if bsa(mid) < 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let lvmi = compute_lv_mass_index(100.0, 160.0, lo).unwrap();
        assert!((lvmi - 105.0).abs() < 1e-9, "{lvmi}");
    }
}
