//! Builds the colour and structure control maps of an image and the
//! attribute tokens of its assessment.

use aesthete::conditioning::{contour_map, hsv_map_to_rgb, rgb_to_hsv_map, Assessment};
use aesthete::pairing::{assessment_text, generate_scene, AestheticParams, SceneClass, SceneSpec};

fn main() -> anyhow::Result<()> {
    let spec = SceneSpec {
        class: SceneClass::Hexagon,
        layout_seed: 9,
        palette: 0,
    };
    let params = AestheticParams {
        saturation: 0.3,
        brightness: 0.9,
        blur: 0.8,
        ..AestheticParams::ideal()
    };
    let (img, _) = generate_scene(&spec, &params, 32)?;
    let hsv = rgb_to_hsv_map(&img)?;
    let mean = |v: &[f32]| v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64;
    println!(
        "HSV means: hue {:.3}, saturation {:.3}, value {:.3}",
        mean(hsv.hue()),
        mean(hsv.saturation()),
        mean(hsv.value())
    );
    println!("HSV round trip max error {:.2e}", hsv_map_to_rgb(&hsv).max_abs_diff(&img));
    let edges = contour_map(&img)?;
    let strong = edges.values().iter().filter(|&&m| m > 0.05).count();
    println!("contour map mean {:.4}, {strong} pixels above 0.05", edges.mean());

    let assessment = assessment_text(&params);
    let text = assessment.render();
    println!("assessment: {text}");
    let tokens: Vec<String> = assessment
        .color()
        .iter()
        .chain(assessment.structure())
        .map(|t| format!("{}#{}", t.text(), t.index()))
        .collect();
    println!("tokens: {}", tokens.join(", "));
    assert_eq!(Assessment::parse(&text)?, assessment);

    let out = std::path::Path::new("target/example_maps");
    std::fs::create_dir_all(out)?;
    img.save_png(&out.join("image.png"))?;
    hsv.image().save_png(&out.join("hsv.png"))?;
    edges.image().save_png(&out.join("contour.png"))?;
    println!("maps written to {}", out.display());
    Ok(())
}
