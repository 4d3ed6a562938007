//! The geometric metrics on hand-built masks and volumes.

use diagflow::imaging::{label3d, Volume3D};
use diagflow::metrics::{self, Laterality};
use diagflow::synth;

fn main() -> anyhow::Result<()> {
    for cup in [6, 11, 16] {
        let mask = synth::disc_cup_mask(96, 22, cup, 0);
        let vcdr = metrics::compute_vcdr(&mask)?;
        let rim = metrics::compute_rim_thickness(&mask, Laterality::Right)?;
        let ratio = metrics::rim_ratio(&rim, metrics::disc_vertical_extent(&mask)?)?;
        let crop = metrics::crop_peripapillary(&mask, 1.5)?;
        println!("cup radius {cup:>2}: vCDR {vcdr:.3}, rim {rim:?}, rim ratio {ratio:.3}, crop {crop:?}");
    }

    let ed = synth::heart_labels([25, 22, 35], 3)?;
    let es = synth::heart_labels([18, 16, 28], 0)?;
    let edv = metrics::compute_volume(&ed, label3d::LV_CAVITY)?;
    let esv = metrics::compute_volume(&es, label3d::LV_CAVITY)?;
    let myo = metrics::compute_volume(&ed, label3d::MYOCARDIUM)?;
    println!("EDV {edv:.1} mL, ESV {esv:.1} mL, LVEF {:.1} %", metrics::compute_lvef(edv, esv)?);
    println!("EDD {:.1} mm", metrics::compute_lv_diameter(&ed)?);
    println!("LVMI {:.1} g/m2", metrics::compute_lv_mass_index(myo, 170.0, 70.0)?);

    let cube = Volume3D::new([10, 10, 10], [1.0; 3], vec![1; 1000])?;
    println!("1000 unit voxels: {} mL", metrics::compute_volume(&cube, 1)?);
    Ok(())
}
