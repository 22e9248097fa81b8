//! Simulator, reporting and persistence properties.

use proptest::prelude::*;

use scd_core::config::ModelFile;
use scd_core::harness::{
    confusion_matrix, cycle_budget, fit_model, run_timeline, CycleBudget, PipelineConfig, RunMode, SimConfig, Stages,
    TimelineConfig,
};
use scd_core::leaksim::{reboot, GroupTable, LeakModel, LeakParams, Session, EM, POWER};

fn quiet() -> LeakParams {
    LeakParams {
        noise_sigma: [1e-12, 1e-12],
        dc_jitter: [0.0, 0.0],
        ..Default::default()
    }
}

/// Jarque-Bera statistic; chi-squared with 2 degrees of freedom under normality.
fn jarque_bera(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let moment = |p: i32| x.iter().map(|v| (v - m).powi(p)).sum::<f64>() / n;
    let (m2, m3, m4) = (moment(2), moment(3), moment(4));
    let skew = m3 / m2.powf(1.5);
    let kurt = m4 / (m2 * m2) - 3.0;
    n / 6.0 * (skew * skew + kurt * kurt / 4.0)
}

#[test]
fn avr_table_partitions_the_instructions() {
    let t = GroupTable::avr();
    assert_eq!(t.group_sizes(), vec![12, 10, 13, 20, 3, 2, 14, 12]);
    let mut seen = vec![0; t.n_instr()];
    for g in 0..t.n_groups() {
        for (w, &i) in t.members(g).iter().enumerate() {
            seen[i] += 1;
            assert_eq!(t.group_of(i), g);
            assert_eq!(t.within_index(i), w);
        }
    }
    assert!(seen.iter().all(|&c| c == 1));
}

#[test]
fn template_sets_are_balanced() {
    let sim = SimConfig {
        n_per_class: 7,
        ..Default::default()
    };
    let ds = sim.training_set().unwrap();
    let mut counts = vec![0; 86];
    for r in ds.records() {
        counts[r.instr] += 1;
        assert_eq!(r.group, GroupTable::avr().group_of(r.instr));
        assert_eq!(r.trace.power().len(), 315);
        assert_eq!(r.trace.em().len(), 315);
    }
    assert!(counts.iter().all(|&c| c == 7));
    assert!((ds.class_priors().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn class_conditional_samples_are_gaussian(instr in 0usize..86, k in 0usize..315, ch in 0usize..2, seed in any::<u64>()) {
        let model = LeakModel::new(LeakParams { seed, ..Default::default() }, GroupTable::avr()).unwrap();
        let session = Session::boot(seed, 1, [0.05, 0.05]);
        let x: Vec<f64> = (0..5000)
            .map(|j| {
                let mut rng = session.trace_rng(j);
                let w = model.gen_window(instr, None, None, &session, &mut rng).unwrap();
                let t = if ch == POWER { w.power() } else { w.em() };
                t.samples()[k] as f64
            })
            .collect();
        // chi-squared(2) upper point at 0.001 / 24 cases (Bonferroni), i.e. 2 ln(24000)
        prop_assert!(jarque_bera(&x) < 20.15);
    }

    #[test]
    fn offset_is_constant_within_a_session(seed in any::<u64>(), id in 0u32..5, instr in 0usize..86) {
        let model = LeakModel::new(quiet(), GroupTable::avr()).unwrap();
        let session = Session::boot(seed, id, [0.05, 0.05]);
        for ch in [POWER, EM] {
            let sig = model.signature(instr, ch);
            let shift = session.offsets[ch] * model.span(ch);
            for slot in 0..4 {
                let mut rng = session.trace_rng(slot);
                let w = model.gen_window(instr, None, None, &session, &mut rng).unwrap();
                let t = if ch == POWER { w.power() } else { w.em() };
                for (v, s) in t.samples().iter().zip(&sig) {
                    prop_assert!((*v as f64 - s - shift).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn class_means_converge_to_the_signature(instr in 0usize..86, k in 0usize..315, n in 50usize..800) {
        let params = LeakParams::default();
        let model = LeakModel::new(params.clone(), GroupTable::avr()).unwrap();
        let session = reboot(&Session::boot(params.seed, 0, params.offset_spread));
        let mean = (0..n)
            .map(|j| {
                let mut rng = session.trace_rng(j as u64);
                model.gen_window(instr, None, None, &session, &mut rng).unwrap().power().samples()[k] as f64
            })
            .sum::<f64>()
            / n as f64;
        let span = model.span(POWER);
        let expect = model.signature(instr, POWER)[k] + session.offsets[POWER] * span;
        let sd = (model.noise_sigma(POWER)[k].powi(2) + (params.dc_jitter[POWER] * span).powi(2)).sqrt();
        prop_assert!((mean - expect).abs() <= 4.5 * sd / (n as f64).sqrt());
    }

    #[test]
    fn confusion_rows_sum_to_class_counts(pairs in prop::collection::vec((0usize..5, 0usize..5), 1..300)) {
        let (pred, truth): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
        let names = (0..5).map(|i| i.to_string()).collect();
        let cm = confusion_matrix(&pred, &truth, names).unwrap();
        for (c, row) in cm.counts.iter().enumerate() {
            prop_assert_eq!(row.iter().sum::<u64>() as usize, truth.iter().filter(|&&t| t == c).count());
        }
        prop_assert!(cm.rates().iter().flatten().all(|r| (0.0..=1.0).contains(r)));
        prop_assert!((0.0..=1.0).contains(&cm.accuracy()));
    }

    #[test]
    fn budget_flag_follows_the_total(w in 1usize..400, groups in 1usize..40, max_group in 1usize..40, ratio in 1u32..500) {
        let b = cycle_budget(w, groups, max_group, ratio);
        let s = b.stages;
        prop_assert_eq!(b.total, s.combine + s.inter + s.within + s.sort + s.adjust);
        prop_assert_eq!(b.real_time, b.total <= b.deadline);
    }
}

#[test]
fn budget_threshold_is_inclusive() {
    let stages = Stages {
        combine: 10,
        inter: 40,
        within: 80,
        sort: 20,
        adjust: 10,
    };
    assert!(CycleBudget::from_stages(stages, 160, 160e6).real_time);
    let over = Stages { within: 81, ..stages };
    assert!(!CycleBudget::from_stages(over, 160, 160e6).real_time);
}

#[test]
fn reloaded_models_classify_identically() {
    let sim = SimConfig {
        n_per_class: 12,
        ..Default::default()
    };
    let pipe = PipelineConfig {
        w_star: 12,
        ..Default::default()
    };
    let model = fit_model(&sim.training_set().unwrap(), &pipe).unwrap().with_fixed(12).unwrap();
    let file = ModelFile::new(model, sim.params.seed, RunMode::RealtimeEmu);
    let back = ModelFile::from_json(&file.to_json()).unwrap();
    assert_eq!(back.model, file.model);
    let lm = sim.model().unwrap();
    let session = Session::boot(3, 2, [0.05, 0.05]);
    let mut rng = session.trace_rng(0);
    for i in 0..86 {
        let w = lm.gen_template_trace(i, &session, &mut rng).unwrap();
        let (a, b) = (&file.model, &back.model);
        assert_eq!(a.features(&w).unwrap(), b.features(&w).unwrap());
        assert_eq!(a.classify(&w).unwrap(), b.classify(&w).unwrap());
        assert_eq!(a.classify_fixed(&w).unwrap(), b.classify_fixed(&w).unwrap());
    }
}

#[test]
fn timeline_follows_the_reboot_protocol() {
    let sim = SimConfig {
        n_per_class: 20,
        ..Default::default()
    };
    let pipe = PipelineConfig {
        w_star: 15,
        batch: 60,
        ..Default::default()
    };
    let tl = TimelineConfig {
        offline_w_star: 15,
        realtime_w_star: 15,
        eval_windows: 90,
        ..Default::default()
    };
    let r = run_timeline(&sim, &pipe, &tl).unwrap();
    assert_eq!(r.session_offsets.len(), 4);
    for mode in [&r.offline, &r.realtime] {
        let points: Vec<usize> = mode.points.iter().map(|p| p.point).collect();
        assert_eq!(points, vec![1, 2, 3, 4, 5, 6]);
        let sessions: Vec<u32> = mode.points.iter().map(|p| p.session).collect();
        assert_eq!(sessions, vec![1, 1, 2, 2, 3, 3]);
        assert_eq!(mode.adaptation.len(), 3);
        for (log, p) in mode.adaptation.iter().zip(mode.points.iter().step_by(2)) {
            assert_eq!(log.steps.len(), 60);
            assert_eq!(p.confusion.counts.iter().flatten().sum::<u64>(), 90);
        }
        for p in &mode.points {
            assert!((0.0..=1.0).contains(&p.rate));
        }
    }
}

