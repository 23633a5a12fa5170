//! Scores renders of one scene under different aesthetic parameters with the
//! measurement-based aesthetic score and checks content consistency.

use aesthete::eval::{measure_stats, pas_score, scs_score};
use aesthete::pairing::{generate_scene, mos_unchecked, AestheticParams, SceneClass, SceneSpec};

fn main() -> anyhow::Result<()> {
    let spec = SceneSpec {
        class: SceneClass::Star,
        layout_seed: 3,
        palette: 1,
    };
    let ideal = AestheticParams {
        size: SceneClass::Star.ideal_size(),
        ..AestheticParams::ideal()
    };
    let variants = [
        ("ideal", ideal),
        ("washed out", AestheticParams { saturation: 0.15, ..ideal }),
        ("dark", AestheticParams { brightness: 0.2, ..ideal }),
        ("centred", AestheticParams { cx: 0.5, cy: 0.5, ..ideal }),
        ("blurred", AestheticParams { blur: 1.5, ..ideal }),
    ];
    let (reference, mask) = generate_scene(&spec, &ideal, 32)?;
    println!("{:<11} {:>6} {:>6} {:>6}  measured (s, v, cx, cy, blur)", "variant", "MOS", "PAS", "SCS");
    for (name, params) in variants {
        let (img, _) = generate_scene(&spec, &params, 32)?;
        let m = measure_stats(&img)?;
        println!(
            "{name:<11} {:>6.2} {:>6.2} {:>6.3}  ({:.2}, {:.2}, {:.2}, {:.2}, {:.2})",
            mos_unchecked(&params),
            pas_score(&img)?,
            scs_score(&img, &reference, &mask)?.score,
            m.saturation,
            m.background_value,
            m.cx,
            m.cy,
            m.blur
        );
    }
    Ok(())
}
