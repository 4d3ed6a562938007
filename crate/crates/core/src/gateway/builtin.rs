//! In-process tools backed by the metric functions.

use crate::imaging::{label3d, GrayImage, Mask2D, Volume3D};
use crate::metrics::{self, Laterality};
use crate::model::{artifact_type, CaseMetadata, EvidenceKind, EvidenceRef, Modality, Unit};

use super::{Payload, Quantity, ToolInput, ToolOutput, ToolRequest, ToolResponse};

pub(super) fn run(request: &ToolRequest) -> ToolResponse {
    match dispatch(request) {
        Ok(r) => r,
        Err(message) => ToolResponse::error(&request.request_id, message),
    }
}

fn inputs_of<'a>(request: &'a ToolRequest, tags: &[&str]) -> Vec<&'a ToolInput> {
    request.inputs.iter().filter(|i| tags.contains(&i.type_tag.as_str())).collect()
}

fn one<'a>(request: &'a ToolRequest, tags: &[&str]) -> Result<&'a ToolInput, String> {
    inputs_of(request, tags)
        .into_iter()
        .next()
        .ok_or_else(|| format!("action `{}` needs an input of type {}", request.action, tags.join(" or ")))
}

fn bytes(input: &ToolInput) -> Result<Vec<u8>, String> {
    input.payload.bytes().map_err(|e| e.to_string())
}

fn mask(request: &ToolRequest) -> Result<Mask2D, String> {
    let input = one(request, &[artifact_type::MASK_2D])?;
    Mask2D::from_pgm(&bytes(input)?).map_err(|e| format!("{}: {e}", input.name))
}

fn volume(input: &ToolInput) -> Result<Volume3D, String> {
    match &input.payload {
        Payload::Path(p) => Volume3D::load_labels(std::path::Path::new(p)).map_err(|e| format!("{}: {e}", input.name)),
        Payload::Inline(_) => Err(format!("{}: volumes must be passed by path", input.name)),
    }
}

fn measurement(name: &str, q: Quantity) -> ToolOutput {
    ToolOutput { name: name.into(), type_tag: artifact_type::MEASUREMENT.into(), payload: Payload::inline(&q.to_bytes()) }
}

fn param_f64(request: &ToolRequest, key: &str, default: f64) -> Result<f64, String> {
    match request.params.get(key) {
        None => Ok(default),
        Some(v) => v.parse().map_err(|_| format!("parameter {key}={v} is not a number")),
    }
}

fn dispatch(request: &ToolRequest) -> Result<ToolResponse, String> {
    let id = &request.request_id;
    let err = |e: metrics::MetricError| e.to_string();
    let outputs = match request.action.as_str() {
        "compute_vcdr" => {
            let vcdr = metrics::compute_vcdr(&mask(request)?).map_err(err)?;
            vec![measurement("vcdr", Quantity::new(vcdr, Unit::Ratio))]
        }
        "compute_rim_thickness" => {
            let laterality = match request.params.get("laterality").map(String::as_str) {
                None | Some("right") => Laterality::Right,
                Some("left") => Laterality::Left,
                Some(other) => return Err(format!("unknown laterality `{other}`")),
            };
            let rim = metrics::compute_rim_thickness(&mask(request)?, laterality).map_err(err)?;
            let q = rim
                .directions()
                .into_iter()
                .fold(Quantity::new(rim.min() as f64, Unit::Pixel), |q, (k, v)| q.component(k, v as f64));
            vec![measurement("rim_profile", q)]
        }
        "compute_rim_ratio" => {
            let profile = Quantity::from_bytes(&bytes(one(request, &[artifact_type::MEASUREMENT])?)?)
                .map_err(|e| e.to_string())?;
            let extent = metrics::disc_vertical_extent(&mask(request)?).map_err(err)?;
            let rim = metrics::RimThickness {
                superior: component(&profile, "superior")?,
                inferior: component(&profile, "inferior")?,
                nasal: component(&profile, "nasal")?,
                temporal: component(&profile, "temporal")?,
            };
            let ratio = metrics::rim_ratio(&rim, extent).map_err(err)?;
            let q = Quantity::new(ratio, Unit::Ratio)
                .component("min_rim_px", rim.min() as f64)
                .component("disc_extent_px", extent as f64);
            vec![measurement("rim_ratio", q)]
        }
        "crop" => {
            let m = mask(request)?;
            let factor = param_f64(request, "margin_factor", metrics::DEFAULT_MARGIN_FACTOR)?;
            let region = metrics::crop_peripapillary(&m, factor).map_err(err)?;
            let image_input = one(request, &[Modality::Fundus2d.as_str(), artifact_type::IMAGE_CROP])?;
            let image = GrayImage::from_pgm(&bytes(image_input)?).map_err(|e| e.to_string())?;
            if (image.width, image.height) != (m.width(), m.height()) {
                return Err(format!(
                    "image is {}x{} but mask is {}x{}",
                    image.width,
                    image.height,
                    m.width(),
                    m.height()
                ));
            }
            let mut resp = ToolResponse::ok(
                id,
                vec![ToolOutput {
                    name: "crop".into(),
                    type_tag: artifact_type::IMAGE_CROP.into(),
                    payload: Payload::inline(&image.crop(&region).to_pgm()),
                }],
            );
            resp.evidence.push(EvidenceRef::new(
                EvidenceKind::CropRegion,
                format!("{},{},{},{}", region.x0, region.y0, region.x1, region.y1),
                format!("peripapillary region, margin factor {factor}"),
            ));
            return Ok(resp);
        }
        "compute_volume" => {
            let vol = volume(one(request, &[artifact_type::LABEL_VOLUME_3D])?)?;
            let label = param_f64(request, "label", label3d::LV_CAVITY as f64)? as u8;
            let ml = metrics::compute_volume(&vol, label).map_err(err)?;
            vec![measurement("volume", Quantity::new(ml, Unit::Millilitre))]
        }
        "compute_lvef" => {
            let vols = inputs_of(request, &[artifact_type::LABEL_VOLUME_3D]);
            if vols.len() != 2 {
                return Err(format!("compute_lvef needs 2 label volumes (ED, ES), got {}", vols.len()));
            }
            let edv = metrics::compute_volume(&volume(vols[0])?, label3d::LV_CAVITY).map_err(err)?;
            let esv = metrics::compute_volume(&volume(vols[1])?, label3d::LV_CAVITY).map_err(err)?;
            let ef = metrics::compute_lvef(edv, esv).map_err(err)?;
            vec![measurement("lvef", Quantity::new(ef, Unit::Percent).component("edv_ml", edv).component("esv_ml", esv))]
        }
        "compute_lv_diameter" => {
            let vol = volume(one(request, &[artifact_type::LABEL_VOLUME_3D])?)?;
            let d = metrics::compute_lv_diameter(&vol).map_err(err)?;
            vec![measurement("lv_diameter", Quantity::new(d, Unit::Millimetre))]
        }
        "compute_lvmi" => {
            let vol = volume(one(request, &[artifact_type::LABEL_VOLUME_3D])?)?;
            let meta_input = one(request, &[Modality::ScalarMetadata.as_str()])?;
            let meta: CaseMetadata = crate::codec::from_json_strict(&String::from_utf8_lossy(&bytes(meta_input)?))
                .map_err(|e| format!("{}: {e}", meta_input.name))?;
            let myo = metrics::compute_volume(&vol, label3d::MYOCARDIUM).map_err(err)?;
            let lvmi = metrics::compute_lv_mass_index(myo, meta.height_cm, meta.weight_kg).map_err(err)?;
            let bsa = metrics::MassIndexParams::default().body_surface_area(meta.height_cm, meta.weight_kg);
            vec![measurement(
                "lvmi",
                Quantity::new(lvmi, Unit::GramsPerSquareMetre).component("myocardium_ml", myo).component("bsa_m2", bsa),
            )]
        }
        other => return Err(format!("unknown builtin action `{other}`")),
    };
    Ok(ToolResponse::ok(id, outputs))
}

fn component(q: &Quantity, key: &str) -> Result<u32, String> {
    q.components
        .get(key)
        .map(|v| *v as u32)
        .ok_or_else(|| format!("rim profile lacks `{key}` component"))
}
