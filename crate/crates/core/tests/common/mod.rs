#![allow(dead_code)]

pub mod oracles;
pub mod scorer;

use densescan::eval::LesionAnnotation;
use densescan::preproc::{tissue_mask, TissueMask};
use densescan::slide_io::{default_levels, MemorySlide, RegionSource};
use densescan::synthgen::{render, RecipeConfig, SlideRecipe, SlideTruth};
use densescan::training::TrainingSlide;

/// Recipe knobs scaled down for slides of a few hundred pixels.
pub fn small_recipe_config(side: usize) -> RecipeConfig {
    RecipeConfig {
        side,
        max_lobes: 2,
        max_lesions: 2,
        micro_radius: [4.0, 7.0],
        macro_radius: [12.0, 18.0],
        min_mimics: 1,
        max_mimics: 2,
        mimic_radius: [6.0, 12.0],
        clearance: 6.0,
        polygon_vertices: 48,
        tile_side: 128,
        ..Default::default()
    }
}

pub struct Rendered {
    pub slide: MemorySlide,
    pub annotation: LesionAnnotation,
    pub truth: SlideTruth,
    pub mask: TissueMask,
}

pub fn render_small(id: &str, seed: u64, tumor: bool, side: usize) -> Rendered {
    let recipe = SlideRecipe::random(id, seed, tumor, &small_recipe_config(side)).unwrap();
    let (img, annotation, truth) = render(&recipe).unwrap();
    let levels = default_levels(img.height() as usize, img.width() as usize);
    let slide = MemorySlide::new(id, img, levels);
    let mask = tissue_mask(&slide, 2).unwrap();
    Rendered { slide, annotation, truth, mask }
}

/// Alternating tumor and normal slides.
pub fn small_set(n: usize, seed: u64, side: usize) -> Vec<Rendered> {
    (0..n)
        .map(|i| render_small(&format!("s{i:02}"), seed.wrapping_add(i as u64), i % 2 == 0, side))
        .collect()
}

pub fn views(set: &[Rendered]) -> Vec<TrainingSlide<'_>> {
    set.iter()
        .map(|r| TrainingSlide {
            source: &r.slide as &dyn RegionSource,
            annotation: r.annotation.clone(),
            mask: r.mask.clone(),
        })
        .collect()
}
