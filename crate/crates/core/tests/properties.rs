//! Property tests over randomly generated inputs.

use pedyn::models::EpisodicMemory;
use pedyn::monitor::{adjust_capacity, regression_slope, ErrorBuffer, TrendReport};
use pedyn::nnet::{Activation, LayerSpec, Network};
use pedyn::policy::{apply_noise, select_goal, NoisePolicy};
use pedyn::som::{Som, SomParams};
use pedyn::world::{MotorCommand, RobotState, VisuoMotorSample};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Smooth activations only: shrinking drives ReLU inputs onto the kink,
/// where finite differences are meaningless.
fn smooth_activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Linear), Just(Activation::Sigmoid)]
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gradients_match_finite_differences(
        seed in 0u64..10_000,
        input_dim in 1usize..4,
        layers in prop::collection::vec((1usize..5, smooth_activation()), 1..4),
        x in prop::collection::vec(-1.0f64..1.0, 4),
        y in prop::collection::vec(-1.0f64..1.0, 5),
    ) {
        let specs: Vec<LayerSpec> = layers.iter().map(|&(w, a)| LayerSpec::new(w, a)).collect();
        let mut net = Network::new(&specs, input_dim, seed).unwrap();
        let xs = [x[..input_dim].to_vec()];
        let ys = [y[..net.output_dim()].to_vec()];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, g) = net.loss_and_gradients(&xs, &ys, false, &mut rng).unwrap();
        let h = 1e-5;
        let last = net.num_layers() - 1;
        for i in 0..net.biases(last).len() {
            let orig = net.biases(last)[i];
            net.biases_mut(last)[i] = orig + h;
            let lp = net.loss_and_gradients(&xs, &ys, false, &mut rng).unwrap().0;
            net.biases_mut(last)[i] = orig - h;
            let lm = net.loss_and_gradients(&xs, &ys, false, &mut rng).unwrap().0;
            net.biases_mut(last)[i] = orig;
            let numeric = (lp - lm) / (2.0 * h);
            prop_assert!((numeric - g.biases[last][i]).abs() <= 1e-6 * (1.0 + numeric.abs()));
        }
    }

    #[test]
    fn network_json_round_trip_is_exact(seed in any::<u64>(), hidden in 1usize..6) {
        let net = Network::new(
            &[LayerSpec::new(hidden, Activation::Relu).with_dropout(0.2), LayerSpec::new(2, Activation::Sigmoid)],
            3,
            seed,
        ).unwrap();
        let back = Network::from_json(&net.to_json().unwrap()).unwrap();
        let bits = |n: &Network| n.flat_parameters().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        prop_assert_eq!(bits(&net), bits(&back));
    }

    #[test]
    fn bmu_is_the_nearest_neuron(seed in any::<u64>(), x in prop::collection::vec(0.0f64..1.0, 4)) {
        let som = Som::new(SomParams::default(), 4, seed).unwrap();
        let b = som.bmu(&x).unwrap();
        let best = (0..som.len()).map(|i| dist2(som.position(i), &x)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(dist2(som.position(b), &x), best);
    }

    #[test]
    fn som_step_moves_every_neuron_toward_input(seed in any::<u64>(), x in prop::collection::vec(0.0f64..1.0, 3)) {
        let mut som = Som::new(SomParams::default(), 3, seed).unwrap();
        let before = som.goal_positions();
        som.train_step(&x).unwrap();
        for (i, old) in before.iter().enumerate() {
            prop_assert!(dist2(som.position(i), &x) <= dist2(old, &x) + 1e-15);
        }
        prop_assert_eq!(som.updates(), 1);
    }

    #[test]
    fn slope_is_translation_invariant_and_scales(
        v in prop::collection::vec(-10.0f64..10.0, 2..50),
        c in -100.0f64..100.0,
        k in 0.1f64..10.0,
    ) {
        let s = regression_slope(&v).unwrap();
        let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
        let scaled: Vec<f64> = v.iter().map(|x| x * k).collect();
        prop_assert!((regression_slope(&shifted).unwrap() - s).abs() <= 1e-9 * (1.0 + s.abs()));
        prop_assert!((regression_slope(&scaled).unwrap() - k * s).abs() <= 1e-9 * (1.0 + (k * s).abs()));
    }

    #[test]
    fn slope_of_a_line_is_exact(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 2usize..50) {
        let v: Vec<f64> = (0..n).map(|i| a + b * i as f64).collect();
        prop_assert!((regression_slope(&v).unwrap() - b).abs() <= 1e-10);
    }

    #[test]
    fn buffers_never_exceed_capacity(ops in prop::collection::vec((any::<bool>(), 0.0f64..1.0), 1..300)) {
        let mut bufs = vec![ErrorBuffer::new(10); 3];
        for (i, &(grow, pe)) in ops.iter().enumerate() {
            bufs[i % 3].push(pe).unwrap();
            adjust_capacity(&mut bufs, if grow { 1e-3 } else { -1e-3 }, 10, 50);
            for b in &bufs {
                prop_assert!(b.len() <= b.capacity());
                prop_assert!((10..=50).contains(&b.capacity()));
            }
        }
    }

    #[test]
    fn memory_stays_bounded(cap in 1usize..50, p in 0.0f64..=1.0, offers in 0usize..500, seed in any::<u64>()) {
        let mut mem = EpisodicMemory::new(cap, p, seed).unwrap();
        for k in 0..offers {
            let slot = mem.offer(VisuoMotorSample { motor: MotorCommand::new(0.0, 0.0), sensory: vec![k as f64] });
            if let Some(s) = slot {
                prop_assert!(s < cap);
            }
            prop_assert!(mem.len() <= cap);
        }
    }

    #[test]
    fn noisy_commands_stay_in_the_workspace(
        x in 0.0f64..=1.0, y in 0.0f64..=1.0, sigma in 0.0f64..2.0, greedy in 0.0f64..=1.0, seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (c, _) = apply_noise(MotorCommand::new(x, y), sigma, greedy, &mut rng);
        prop_assert!(c.in_bounds());
    }

    #[test]
    fn sigma_is_monotone(a in -0.1f64..0.1, b in -0.1f64..0.1) {
        let p = NoisePolicy::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (sl, sh) = (p.exploration_sigma(Some(lo)), p.exploration_sigma(Some(hi)));
        prop_assert!(sl <= sh);
        prop_assert!(sl >= p.sigma_min && sh <= p.sigma_max);
    }

    #[test]
    fn selected_goal_has_minimal_slope(slopes in prop::collection::vec(prop::option::of(-1.0f64..1.0), 1..12), seed in any::<u64>()) {
        let trends: Vec<TrendReport> = slopes
            .iter()
            .map(|s| s.map_or(TrendReport::UNDEFINED, |slope| TrendReport { slope, defined: true }))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = select_goal(&trends, &mut rng).unwrap();
        let min = trends.iter().map(|t| t.effective_slope()).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(trends[g].effective_slope(), min);
    }

    #[test]
    fn trajectories_are_small_steps_ending_at_target(
        sx in 0.0f64..=1.0, sy in 0.0f64..=1.0, tx in 0.0f64..=1.0, ty in 0.0f64..=1.0,
    ) {
        let mut robot = RobotState::new(MotorCommand::new(sx, sy));
        let target = MotorCommand::new(tx, ty);
        let pts = robot.trajectory(target, 0.02);
        prop_assert_eq!(*pts.last().unwrap(), target);
        prop_assert_eq!(robot.position, target);
        let mut prev = MotorCommand::new(sx, sy);
        for p in &pts {
            prop_assert!(p.in_bounds());
            prop_assert!(prev.distance(p) <= 0.02 + 1e-12);
            prev = *p;
        }
    }
}
