//! Synthetic grouped dataset: generation, group stats, lighting attenuation,
//! and the on-disk archive format.
//!
//! ```bash
//! cargo run --release --example generate_dataset
//! ```

use switchnas::data::{attenuate, generate, load_dataset, poorly_lit_subset, render_scene, save_dataset, DatasetSpec, N_GROUPS};
use switchnas::rng::Rng;

fn main() {
    let spec = DatasetSpec { seed: 7, ..DatasetSpec::default() };
    let ds = generate(&spec).unwrap();
    println!(
        "generated {} train / {} val / {} test images of {}x{}",
        ds.train.len(),
        ds.val.len(),
        ds.test.len(),
        spec.image_h,
        spec.image_w
    );

    let mut counts = [0usize; N_GROUPS];
    for &g in &ds.test.groups {
        counts[g as usize - 1] += 1;
    }
    println!("test-split group counts (1=lightest .. 10=darkest): {counts:?}");
    println!("declared minority group: {}", spec.declared_minority());

    let dim = poorly_lit_subset(&ds.test, 0.5).unwrap();
    println!("poorly lit (lighting < 0.5): {} of {} test images", dim.len(), ds.test.len());

    // Attenuation is exactly multiplicative on the pre-noise scene.
    let mut rng = Rng::new(1);
    let scene = render_scene(&spec, 1, 5, &mut rng);
    let bright = attenuate(&scene, 1.0);
    let dark = attenuate(&scene, 0.3);
    let exact = dark.iter().zip(&bright).all(|(d, b)| *d == 0.3 * b);
    println!("attenuate(scene, 0.3) == 0.3 * attenuate(scene, 1.0): {exact}");

    let dir = std::env::temp_dir().join("switchnas-example-dataset");
    save_dataset(&ds, &dir).unwrap();
    let reloaded = load_dataset(&dir).unwrap();
    println!("archive round-trip at {}: identical = {}", dir.display(), reloaded == ds);
}
