use arcnet::encoder::{encode_all, encode_imu, encode_layers, EncoderConfig, EncoderParams, CAPSULES_PER_IMU};
use arcnet::numerics::{grad_check, Differentiable, GradCheckOptions, Real, Tape, Tensor, Var};
use arcnet::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn params(seed: u64) -> EncoderParams {
    EncoderParams::init(&EncoderConfig::default(), &mut ChaCha8Rng::seed_from_u64(seed))
}

fn run(p: &EncoderParams, x: &Tensor) -> Tensor {
    let mut tape = Tape::<f32>::new();
    let vars = p.register(&mut tape);
    let xv = tape.leaf(x.clone());
    let caps = encode_all(&mut tape, xv, &vars).unwrap();
    tape.value(caps).clone()
}

#[test]
fn capsule_count_scales_with_imu_count() {
    let p = params(1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n_imu in [3, 7] {
        let out = run(&p, &random(&mut rng, &[2, n_imu, 6, 128]));
        assert_eq!(out.shape(), &[2, 12 * n_imu, 96]);
    }
}

#[test]
fn single_slab_output_is_twelve_by_ninety_six() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let out = encode_imu(&random(&mut rng, &[6, 128]), &params(1)).unwrap();
    assert_eq!(out.shape(), &[12, 96]);
}

#[test]
fn wrong_window_length_is_a_dimension_error() {
    let err = encode_imu(&Tensor::zeros(&[6, 100]), &params(1)).unwrap_err();
    assert!(matches!(err, arcnet::Error::Dimension(_)));
}

#[test]
fn concatenation_follows_imu_order() {
    let p = params(4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let slabs: Vec<Tensor> = (0..3).map(|_| random(&mut rng, &[6, 128])).collect();
    let solo: Vec<Tensor> = slabs.iter().map(|s| encode_imu(s, &p).unwrap()).collect();
    let block = 12 * 96;
    for order in [[0, 1, 2], [2, 0, 1], [1, 2, 0]] {
        let data: Vec<f32> = order.iter().flat_map(|&m| slabs[m].data().to_vec()).collect();
        let out = run(&p, &Tensor::from_vec(&[1, 3, 6, 128], data).unwrap());
        for (slot, &m) in order.iter().enumerate() {
            // the same slab gives the same capsules whatever slot it sits in
            assert_eq!(&out.data()[slot * block..(slot + 1) * block], solo[m].data());
        }
    }
}

#[test]
fn intermediate_layer_shapes() {
    let p = params(6);
    let mut tape = Tape::<f32>::new();
    let vars = p.register(&mut tape);
    let x = tape.leaf(Tensor::zeros(&[1, 2, 6, 128]));
    let layers = encode_layers(&mut tape, x, &vars).unwrap();
    assert_eq!(tape.shape(layers.l1), &[2, 64, 6, 120]);
    assert_eq!(tape.shape(layers.l2), &[2, 96, 2, 26]);
    assert_eq!(tape.shape(layers.l3), &[2, 96, 1, 12]);
    assert_eq!(tape.shape(layers.capsules), &[1, 24, 96]);
}

fn l2_activations(p: &EncoderParams, x: &Tensor) -> Tensor {
    let mut tape = Tape::<f32>::new();
    let vars = p.register(&mut tape);
    let xv = tape.leaf(x.clone());
    let layers = encode_layers(&mut tape, xv, &vars).unwrap();
    tape.value(layers.l2).clone()
}

#[test]
fn accelerometer_path_ignores_gyroscope_rows() {
    let p = params(7);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random(&mut rng, &[1, 1, 6, 128]);
    let mut zeroed = x.clone();
    zeroed.data_mut()[3 * 128..].fill(0.0);
    let a = l2_activations(&p, &x);
    let b = l2_activations(&p, &zeroed);
    let (c, w) = (96, 26);
    let mut differs = false;
    for ch in 0..c {
        let row0 = ch * 2 * w;
        assert_eq!(&a.data()[row0..row0 + w], &b.data()[row0..row0 + w], "channel {ch}");
        differs |= a.data()[row0 + w..row0 + 2 * w] != b.data()[row0 + w..row0 + 2 * w];
    }
    assert!(differs, "gyroscope rows should influence height index 1");
}

/// Encoder output contracted with a fixed random probe.
struct ProbedEncoder {
    probe: Vec<f64>,
}

impl Differentiable for ProbedEncoder {
    fn eval<T: Real>(&self, t: &mut Tape<T>, v: &[Var]) -> Result<Var> {
        let p = arcnet::encoder::EncoderVars {
            l1_kernel: v[1],
            l1_bias: v[2],
            l2_kernel: v[3],
            l2_bias: v[4],
            l3_kernel: v[5],
            l3_bias: v[6],
        };
        let caps = encode_all(t, v[0], &p)?;
        let n = t.value(caps).numel();
        let flat = t.reshape(caps, &[1, n])?;
        let probe = t.leaf(Tensor::from_vec(&[n, 1], self.probe.iter().map(|&e| T::from_f64(e)).collect())?);
        t.matmul(flat, probe)
    }
}

#[test]
fn full_encoder_passes_finite_differences() {
    let p = params(9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let x = random(&mut rng, &[1, 2, 6, 128]);
    let n = 2 * CAPSULES_PER_IMU * 96;
    let probe = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mut ins = vec![x];
    ins.extend([&p.l1_kernel, &p.l1_bias, &p.l2_kernel, &p.l2_bias, &p.l3_kernel, &p.l3_bias].map(|t| t.clone()));
    // thousands of ReLU units feed each output, so a 1e-3 step crosses kinks; the f64 side affords 1e-6
    let opts = GradCheckOptions { step: 1e-6, scale_floor: 1e-3, max_entries: Some(40), seed: 11, ..Default::default() };
    let rep = grad_check(&ProbedEncoder { probe }, &ins, 1e-3, &opts).unwrap();
    eprintln!("full encoder: worst relative error {:.2e}", rep.max_rel_error());
    assert!(rep.passed(), "{rep:?}");
}
