use meson_cli::RunConfig;
use meson_core::Axis;
use proptest::prelude::*;

proptest! {
    #[test]
    fn emit_then_parse_is_identity(
        l in 2usize..=20,
        g in 0.0f64..1.5,
        h in 0.0f64..1.0,
        dt in 0.001f64..1.0,
        steps in 1usize..500,
        shots in 0u64..1_000_000,
        seed in any::<u64>(),
        axes in prop::sample::subsequence(vec![Axis::X, Axis::Y, Axis::Z], 1..=3),
        noise in prop::option::of((0.0f64..0.1, 0.0f64..0.1, 0.0f64..0.4, 0.0f64..0.4, 1usize..50)),
        grid in prop::collection::vec(0.0f64..1.0, 1..12),
    ) {
        let mut text = format!(
            "model.L = {l}\nmodel.g = {g}\nmodel.h = {h}\nplan.dt = {dt}\nplan.n_steps = {steps}\n\
             plan.shots = {shots}\nplan.seed = {seed}\nplan.axes = {}\nsweep.g = {}\n",
            axes.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","),
            grid.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        if let Some((p1, p2, p01, p10, traj)) = noise {
            text += &format!("noise.p1 = {p1}\nnoise.p2 = {p2}\nnoise.p01 = {p01}\nnoise.p10 = {p10}\nnoise.trajectories = {traj}\n");
        }
        let cfg = RunConfig::parse(&text).unwrap();
        let emitted = cfg.emit();
        let again = RunConfig::parse(&emitted).unwrap();
        prop_assert_eq!(&again, &cfg);
        prop_assert_eq!(again.emit(), emitted);
    }
}
