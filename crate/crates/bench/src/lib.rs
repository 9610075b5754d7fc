//! Fixtures shared by the benchmarks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripart_core::paracat::{HeadConfig, HeadParams, TokenBundle};
use tripart_core::pons::{LayerId, LayerSpec, PonsConfig, PonsParams};
use tripart_core::Matrix;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Head sized like the toy training run.
pub fn toy_head() -> HeadConfig {
    HeadConfig { depth: 2, d_model: 64, heads: 4, k_chunk: 5, d_act: 4, max_image_tokens: 16, max_text_tokens: 16, ..HeadConfig::default() }
}

/// Head with the full chunk shape (K = 20, D = 16) and a narrow width.
pub fn chunk_head() -> HeadConfig {
    HeadConfig { depth: 2, d_model: 128, heads: 4, k_chunk: 20, d_act: 16, max_image_tokens: 64, max_text_tokens: 16, ..HeadConfig::default() }
}

pub fn head_fixture(cfg: &HeadConfig, seed: u64) -> (HeadParams, TokenBundle) {
    let mut r = rng(seed);
    let params = HeadParams::init(cfg, &mut r).expect("valid head");
    let d = cfg.d_model;
    let mut tokens = |n: usize| Matrix::from_fn(n, d, |_, _| r.gen_range(-1.0..1.0));
    let bundle = TokenBundle {
        context: tokens(24),
        image: tokens(cfg.max_image_tokens),
        text: tokens(8),
        state: tokens(1),
    };
    (params, bundle)
}

pub fn pons_fixture(tokens: usize, d: usize, seed: u64) -> (PonsParams, Matrix) {
    let mut r = rng(seed);
    let cfg = PonsConfig {
        d_model: d,
        n_context: 24,
        layers: vec![LayerSpec { layer: LayerId::Late, dim: d }],
        cross_layer_attention: false,
    };
    let params = PonsParams::init(&cfg, &mut r).expect("valid adapter");
    let g = Matrix::from_fn(tokens, d, |_, _| r.gen_range(-1.0..1.0));
    (params, g)
}

pub fn logits(dims: usize, seed: u64) -> Vec<[f64; 3]> {
    let mut r = rng(seed);
    (0..dims).map(|_| [r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0), r.gen_range(-2.0..2.0)]).collect()
}
