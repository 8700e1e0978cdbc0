use super::*;
use crate::nn::EntryKind;
use crate::wavelet::stack_channels;

fn desk_gray() -> ArchConfig {
    ArchConfig::desk(1, 32)
}

fn posterior_const<'t>(tape: &'t Tape, b: usize, d: usize) -> GaussianPosterior<'t> {
    GaussianPosterior {
        mean: tape.constant(Tensor::zeros(&[b, d])),
        logvar: tape.constant(Tensor::zeros(&[b, d])),
    }
}

#[test]
fn large_config_shapes() {
    let arch = ArchConfig::large(3);
    let mut rng = Rng::new(0);
    let x = rng.sample_uniform(&[1, 3, 64, 64], 0.0, 1.0);
    for kind in [ModelKind::Vae, ModelKind::WaveletVaeMr] {
        let model = Model::new(kind, arch.clone()).unwrap();
        let store = model.init(&mut rng).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape, Mode::Eval);
        let q = model.encode(&bound, &x).unwrap();
        assert_eq!(q.mean.shape(), vec![1, 64]);
        assert_eq!(q.logvar.shape(), vec![1, 64]);
        let z = tape.constant(rng.sample_normal(&[1, 64]));
        if kind == ModelKind::Vae {
            assert_eq!(model.decoder.decode_image(&bound, z).unwrap().shape(), vec![1, 3, 64, 64]);
        } else {
            let p = model.decoder.decode_wavelets(&bound, z).unwrap();
            let shapes: Vec<_> = p.levels.iter().map(|v| v.shape()).collect();
            assert_eq!(shapes, vec![vec![1, 12, 32, 32], vec![1, 12, 16, 16], vec![1, 12, 8, 8]]);
        }
    }
}

#[test]
fn desk_grayscale_first_level_shape() {
    let model = Model::new(ModelKind::WaveletVae, desk_gray()).unwrap();
    let store = model.init(&mut Rng::new(1)).unwrap();
    let tape = Tape::new();
    let bound = store.bind(&tape, Mode::Eval);
    let p = model
        .decoder
        .decode_wavelets(&bound, tape.constant(Tensor::zeros(&[2, 16])))
        .unwrap();
    assert_eq!(p.levels.len(), 1);
    assert_eq!(p.levels[0].shape(), vec![2, 4, 16, 16]);
}

#[test]
fn invalid_architecture_is_a_config_error() {
    let mut arch = desk_gray();
    arch.image_size = 20;
    assert!(matches!(Model::new(ModelKind::Vae, arch), Err(Error::Config(_))));
    let mut arch = desk_gray();
    arch.mr_levels = 4;
    assert!(Model::new(ModelKind::WaveletVaeMr, arch).is_err());
}

#[test]
fn vae_c_output_is_strictly_inside_unit_interval() {
    let model = Model::new(ModelKind::VaeC, desk_gray()).unwrap();
    let store = model.init(&mut Rng::new(2)).unwrap();
    let z = Rng::new(3).sample_normal(&[4, 16]).map(|v| 10.0 * v);
    let x = decode_latents(&model, &store, &z).unwrap();
    assert!(x.data().iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn perfect_prediction_has_zero_loss() {
    let x = Rng::new(4).sample_uniform(&[2, 1, 16, 16], 0.0, 1.0);
    let p = decompose(&x, 3).unwrap();
    let tape = Tape::new();
    let pred = WaveletPrediction {
        levels: (1..=3).map(|j| tape.constant(p.stacked(j).unwrap())).collect(),
    };
    let q = posterior_const(&tape, 2, 4);
    let e = wavelet_elbo(&x, &pred, &q, &LossConfig { beta: 5.0, level_weights: vec![] }).unwrap();
    assert_eq!(e.values(), ElboValues::default());
    // The first level alone inverts back to the input.
    let img = idwt2_var(&pred.levels[0]).unwrap().value();
    assert!(img.max_abs_diff(&x) < 1e-5);
}

#[test]
fn beta_weights_only_the_detail_term() {
    let mut rng = Rng::new(5);
    let x = rng.sample_uniform(&[2, 1, 8, 8], 0.0, 1.0);
    let tape = Tape::new();
    let pred = WaveletPrediction {
        levels: vec![tape.constant(rng.sample_normal(&[2, 4, 4, 4]))],
    };
    let q = GaussianPosterior {
        mean: tape.constant(rng.sample_normal(&[2, 3])),
        logvar: tape.constant(rng.sample_normal(&[2, 3])),
    };
    let at = |beta| wavelet_elbo(&x, &pred, &q, &LossConfig { beta, level_weights: vec![] }).unwrap().values();
    let zero = at(0.0);
    assert!((zero.total - (zero.ll_recon + zero.kl)).abs() < 1e-4);
    let five = at(5.0);
    assert!(five.detail_recon > 0.0);
    assert!((five.total - (five.ll_recon + 5.0 * five.detail_recon + five.kl)).abs() < 1e-3);
}

#[test]
fn level_mismatch_is_an_error() {
    let x = Tensor::zeros(&[1, 1, 8, 8]);
    let tape = Tape::new();
    let pred = WaveletPrediction {
        levels: vec![tape.constant(Tensor::zeros(&[1, 4, 2, 2]))],
    };
    let q = posterior_const(&tape, 1, 2);
    assert!(wavelet_elbo(&x, &pred, &q, &LossConfig::default()).is_err());
}

#[test]
fn constant_first_level_generates_constant_image() {
    let model = Model::new(ModelKind::WaveletVae, desk_gray()).unwrap();
    let mut store = model.init(&mut Rng::new(6)).unwrap();
    let c = 0.3f32;
    store.set("decoder.head1.0.weight", Tensor::zeros(&[4, 8, 1, 1])).unwrap();
    store
        .set("decoder.head1.0.bias", Tensor::from_vec(vec![4], vec![2.0 * c, 0.0, 0.0, 0.0]).unwrap())
        .unwrap();
    let img = generate(&model, &store, &mut Rng::new(7), 3).unwrap();
    assert_eq!(img.shape(), &[3, 1, 32, 32]);
    assert!(img.data().iter().all(|&v| (v - c).abs() < 1e-6));
}

#[test]
fn generation_is_seeded_and_unclamped() {
    let model = Model::new(ModelKind::WaveletVae, desk_gray()).unwrap();
    let mut store = model.init(&mut Rng::new(8)).unwrap();
    let a = generate(&model, &store, &mut Rng::new(9), 4).unwrap();
    let b = generate(&model, &store, &mut Rng::new(9), 4).unwrap();
    assert_eq!(a, b);
    store.set("decoder.head1.0.bias", Tensor::from_vec(vec![4], vec![-4.0, 0.0, 0.0, 0.0]).unwrap()).unwrap();
    let shifted = generate(&model, &store, &mut Rng::new(9), 4).unwrap();
    assert!(shifted.data().iter().any(|&v| v < 0.0));
    assert!(clamp_unit(&shifted).data().iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn single_level_multiresolution_matches_wavelet_vae() {
    let mut arch = desk_gray();
    arch.mr_levels = 1;
    let single = Model::new(ModelKind::WaveletVae, arch.clone()).unwrap();
    let multi = Model::new(ModelKind::WaveletVaeMr, arch).unwrap();
    let store = single.init(&mut Rng::new(10)).unwrap();
    assert_eq!(store, multi.init(&mut Rng::new(10)).unwrap());
    let x = Rng::new(11).sample_uniform(&[3, 1, 32, 32], 0.0, 1.0);
    let cfg = LossConfig { beta: 5.0, level_weights: vec![] };
    let run = |m: &Model| {
        let tape = Tape::new();
        let bound = store.bind(&tape, Mode::Train);
        m.loss(&bound, &x, &mut Rng::new(12), &cfg).unwrap().values()
    };
    assert_eq!(run(&single), run(&multi));
}

#[test]
fn kl_does_not_depend_on_decoder() {
    let arch = desk_gray();
    let x = Rng::new(13).sample_uniform(&[2, 1, 32, 32], 0.0, 1.0);
    let kl = |kind| {
        let m = Model::new(kind, arch.clone()).unwrap();
        let store = m.init(&mut Rng::new(14)).unwrap();
        let tape = Tape::new();
        let bound = store.bind(&tape, Mode::Train);
        m.loss(&bound, &x, &mut Rng::new(15), &LossConfig::default()).unwrap().values().kl
    };
    assert_eq!(kl(ModelKind::Vae), kl(ModelKind::WaveletVaeMr));
}

#[test]
fn kl_gradient_reaches_encoder() {
    let model = Model::new(ModelKind::WaveletVae, desk_gray()).unwrap();
    let store = model.init(&mut Rng::new(16)).unwrap();
    let x = Rng::new(17).sample_uniform(&[4, 1, 32, 32], 0.0, 1.0);
    let tape = Tape::new();
    let bound = store.bind(&tape, Mode::Train);
    let q = model.encode(&bound, &x).unwrap();
    tape.backward(&kl_to_standard_normal(&q).unwrap()).unwrap();
    let grads = bound.grads();
    for (e, g) in store.entries().iter().zip(grads) {
        if e.kind == EntryKind::Param && e.name.starts_with("encoder") && e.name.ends_with("weight") {
            let g = g.unwrap();
            assert!(g.is_finite() && g.sq_norm_f64() > 0.0, "{}", e.name);
        }
    }
}

#[test]
fn traversal_shapes_and_invariance() {
    let model = Model::new(ModelKind::WaveletVaeMr, desk_gray()).unwrap();
    let mut store = model.init(&mut Rng::new(18)).unwrap();
    let x = Rng::new(19).sample_uniform(&[1, 1, 32, 32], 0.0, 1.0);
    let grid = latent_traversal(&model, &store, &x, 2, DEFAULT_TRAVERSAL_RANGE, DEFAULT_TRAVERSAL_STEPS).unwrap();
    assert_eq!(grid.shape(), &[10, 1, 32, 32]);
    let flat = latent_traversal(&model, &store, &x, 2, (0.5, 0.5), 4).unwrap();
    let first = flat.slice_outer(0, 1).unwrap();
    for s in 1..4 {
        assert_eq!(flat.slice_outer(s, 1).unwrap(), first);
    }
    // Cut every weight leaving z₂; the sweep then changes nothing.
    let name = "decoder.block1.0.weight";
    let mut w = store.get(name).unwrap().clone();
    let cols = w.shape()[1];
    w.data_mut()[2 * cols..3 * cols].iter_mut().for_each(|v| *v = 0.0);
    store.set(name, w).unwrap();
    let cut = latent_traversal(&model, &store, &x, 2, DEFAULT_TRAVERSAL_RANGE, 5).unwrap();
    let first = cut.slice_outer(0, 1).unwrap();
    for s in 1..5 {
        assert_eq!(cut.slice_outer(s, 1).unwrap(), first);
    }
}

#[test]
fn reconstruction_is_finite_and_seeded() {
    let model = Model::new(ModelKind::Vae, desk_gray()).unwrap();
    let store = model.init(&mut Rng::new(20)).unwrap();
    let x = Rng::new(21).sample_uniform(&[2, 1, 32, 32], 0.0, 1.0);
    let a = reconstruct_input(&model, &store, &x, &mut Rng::new(22)).unwrap();
    let b = reconstruct_input(&model, &store, &x, &mut Rng::new(22)).unwrap();
    assert!(a.is_finite());
    assert_eq!(a, b);
    assert!(model.encode(&store.bind(&Tape::new(), Mode::Eval), &Tensor::zeros(&[1, 3, 32, 32])).is_err());
}

#[test]
fn stacked_targets_use_subband_order() {
    let x = Rng::new(23).sample_normal(&[1, 2, 4, 4]);
    let s = crate::wavelet::dwt2(&x).unwrap();
    let stacked = stack_channels(&s).unwrap();
    assert_eq!(stacked.slice_outer(0, 1).unwrap().data()[..8], s.ll.data()[..8]);
}
