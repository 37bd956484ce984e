//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line.
//!
//! Criteria 3 to 5 run full-scale designs and take minutes each; they are
//! ignored by default and run with
//! `cargo test --release -p rfoc --test acceptance -- --include-ignored`.

use std::io::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rfoc::config::parse_config;
use rfoc::mat3;
use rfoc::metrics::DesignReport;
use rfoc::model::{
    ControlWaveform, GradientWaveform, PhysicalConstants, RelaxationParams, SpaceGrid, TimeGrid, PROTON_GAMMA,
};
use rfoc::optimizer::{default_params, steihaug_cg, trust_region_newton, CgStatus, QuadraticModel};
use rfoc::runner::{self, Problem};
use rfoc::solvers::BlochSystem;

/// Written past the test harness capture so the line shows up for passing
/// tests too.
fn verdict(criterion: u32, pass: bool, detail: &str) {
    let line = format!(
        "acceptance criterion {criterion}: {} {detail}\n",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
}

#[test]
fn criterion_1_derivatives() {
    let start = Instant::now();
    let check = runner::run_check_derivatives(&parse_config("").unwrap()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let (g, h, s) = check.worst();
    let pass = g <= 1e-6 && h <= 1e-5 && s <= 1e-8 && elapsed < 10.0;
    verdict(
        1,
        pass,
        &format!("gradient {g:.2e} <= 1e-6, hessian {h:.2e} <= 1e-5, symmetry {s:.2e} <= 1e-8, {elapsed:.2} s < 10 s"),
    );
    assert!(pass);
}

fn max_dist(a: mat3::Vec3, b: mat3::Vec3) -> f64 {
    (0..3).map(|k| (a[k] - b[k]).abs()).fold(0.0, f64::max)
}

#[test]
fn criterion_2_solver_accuracy() {
    let start = Instant::now();
    let t = TimeGrid::new(697, 512, 5e-6).unwrap();
    let consts = PhysicalConstants::new(PROTON_GAMMA, 1e-6).unwrap();
    let off = RelaxationParams::disabled();

    let space = SpaceGrid::new(0.01, 5).unwrap();
    let sys = BlochSystem::new(t, space, consts, off, GradientWaveform::zeros(&t)).unwrap();
    let c = 0.9;
    let traj = sys.forward(&ControlWaveform::new(&t, vec![[c, 0.0]; 512]).unwrap()).unwrap();
    let mut rotation: f64 = 0.0;
    for m in 0..=t.steps() {
        let theta = PROTON_GAMMA * 1e-6 * c * t.dt() * m.min(512) as f64;
        for i in 0..5 {
            rotation = rotation.max(max_dist(traj.at(m, i), [0.0, theta.sin(), theta.cos()]));
        }
    }

    // offsets up to 20 µm, where the per-step angle is small enough for the
    // closed form to hold at this tolerance
    let g = 11.04e-3;
    let space = SpaceGrid::new(2e-5, 9).unwrap();
    let sys = BlochSystem::new(t, space, consts, off, GradientWaveform::constant(&t, g))
        .unwrap()
        .with_initial(vec![[1.0, 0.0, 0.0]; 9])
        .unwrap();
    let traj = sys.forward(&ControlWaveform::zeros(&t)).unwrap();
    let mut precession: f64 = 0.0;
    for i in 0..9 {
        let w = PROTON_GAMMA * g * space.position(i);
        for m in 0..=t.steps() {
            let phi = w * t.dt() * m as f64;
            precession = precession.max(max_dist(traj.at(m, i), [phi.cos(), -phi.sin(), 0.0]));
        }
    }

    let space = SpaceGrid::new(0.1, 201).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grad = GradientWaveform::new(&t, (0..697).map(|_| rng.gen_range(-0.012..0.012)).collect(), f64::INFINITY)
        .unwrap();
    let sys = BlochSystem::new(t, space, consts, off, grad).unwrap();
    let u = ControlWaveform::new(
        &t,
        (0..512).map(|_| [rng.gen_range(-3.0..3.0), rng.gen_range(-3.0..3.0)]).collect(),
    )
    .unwrap();
    let traj = sys.forward(&u).unwrap();
    let mut norm: f64 = 0.0;
    for i in 0..space.points() {
        for m in 0..=t.steps() {
            norm = norm.max((mat3::norm(traj.at(m, i)) - 1.0).abs());
        }
    }
    let elapsed = start.elapsed().as_secs_f64();
    let pass = rotation <= 1e-6 && precession <= 1e-6 && norm <= 1e-10 && elapsed < 1.0;
    verdict(
        2,
        pass,
        &format!(
            "hard pulse {rotation:.2e} <= 1e-6, precession {precession:.2e} <= 1e-6, norm drift {norm:.2e} <= 1e-10, {elapsed:.3} s < 1 s"
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "full-scale design, minutes of runtime"]
fn criterion_3_single_slice_design() {
    let config = parse_config("").unwrap();
    let start = Instant::now();
    let problem = Problem::new(&config).unwrap();
    let outcome = runner::design(&problem, &config).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    let r = outcome.report;
    let ratio = r.b1_peak_y / r.b1_peak;
    let checks = [
        r.newton_iters <= 5,
        r.total_cg_steps <= 50,
        (1.1e-2..=1.9e-2).contains(&r.rmse_ideal_xy),
        ratio <= 0.05,
    ];
    let pass = checks.iter().all(|&c| c);
    verdict(
        3,
        pass,
        &format!(
            "newton {} <= 5, cg {} <= 50, rmse {:.3e} in [1.1e-2, 1.9e-2], peak_y/peak_x {ratio:.1e} <= 0.05, {elapsed:.0} s",
            r.newton_iters, r.total_cg_steps, r.rmse_ideal_xy
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "full-scale designs for six slice counts, tens of minutes"]
fn criterion_4_sms_peak_reduction() {
    let config = parse_config("").unwrap();
    let mut rows: Vec<(usize, DesignReport, DesignReport)> = Vec::new();
    for count in 1..=6 {
        let row = config.comparison_row(count);
        let problem = Problem::new(&row).unwrap();
        let oc = runner::design(&problem, &row).unwrap().report;
        let conv = runner::conventional(&problem).unwrap().report;
        let _ = std::io::stderr().write_all(
            format!(
                "  {count} slice(s): energy {:.2} vs {:.2}, peak {:.2} vs {:.2}, mae_out {:.2e} vs {:.2e}\n",
                oc.b1_energy,
                conv.b1_energy,
                oc.b1_peak,
                conv.b1_peak,
                oc.mae_out.unwrap_or(f64::NAN),
                conv.mae_out.unwrap_or(f64::NAN)
            )
            .as_bytes(),
        );
        rows.push((count, oc, conv));
    }
    let (_, oc6, conv6) = rows[5];
    let peak_ratio = oc6.b1_peak / conv6.b1_peak;
    let worst_energy = rows
        .iter()
        .map(|(_, oc, conv)| (oc.b1_energy / conv.b1_energy - 1.0).abs())
        .fold(0.0, f64::max);
    let mae_ok = rows[3..]
        .iter()
        .all(|(_, oc, conv)| oc.mae_out.unwrap_or(f64::INFINITY) <= conv.mae_out.unwrap_or(0.0));
    let pass = peak_ratio <= 0.65 && worst_energy <= 0.10 && mae_ok;
    verdict(
        4,
        pass,
        &format!(
            "6-slice peak ratio {peak_ratio:.3} <= 0.65, worst energy deviation {:.1}% <= 10%, mae_out oc <= conv for 4-6: {mae_ok}",
            100.0 * worst_energy
        ),
    );
    assert!(pass);
}

#[test]
#[ignore = "five full-scale six-slice designs, tens of minutes"]
fn criterion_5_regularization_sweep() {
    let config = parse_config("slices.count = 6\n").unwrap();
    let alphas = [1e-5, 5e-5, 1e-4, 5e-4, 1e-3];
    let mut reports = Vec::new();
    for &alpha in &alphas {
        let mut row = config.comparison_row(6);
        row.alpha = alpha;
        let r = runner::design(&Problem::new(&row).unwrap(), &row).unwrap().report;
        let _ = std::io::stderr().write_all(
            format!(
                "  alpha {alpha:.0e}: rmse {:.4e}, energy {:.2}, peak {:.2}\n",
                r.rmse, r.b1_energy, r.b1_peak
            )
            .as_bytes(),
        );
        reports.push(r);
    }
    let pairs = || reports.windows(2);
    let rmse_up = pairs().all(|w| w[1].rmse >= w[0].rmse);
    let energy_down = pairs().all(|w| w[1].b1_energy <= w[0].b1_energy);
    let peak_down = pairs().all(|w| w[1].b1_peak <= w[0].b1_peak);
    let drop = 1.0 - reports[4].b1_energy / reports[0].b1_energy;
    let pass = rmse_up && energy_down && peak_down && (0.10..=0.25).contains(&drop);
    verdict(
        5,
        pass,
        &format!(
            "rmse nondecreasing {rmse_up}, energy nonincreasing {energy_down}, peak nonincreasing {peak_down}, energy drop {:.1}% in [10%, 25%]",
            100.0 * drop
        ),
    );
    assert!(pass);
}

fn random_quadratic(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> QuadraticModel {
    let n = rng.gen_range(1..8);
    QuadraticModel {
        diagonal: (0..n).map(|_| [rng.gen_range(lo..hi), rng.gen_range(lo..hi)]).collect(),
        center: ControlWaveform::with_dt(
            0.25,
            (0..n).map(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]).collect(),
        )
        .unwrap(),
        offset: 1.0,
    }
}

#[test]
fn criterion_6_optimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let cases = 200;
    let mut one_step = 0;
    let mut boundary = 0;
    let mut negative = 0;
    for _ in 0..cases {
        let mut model = random_quadratic(&mut rng, 0.2, 5.0);
        let u0 = model.center.scaled(0.0);
        let mut params = default_params();
        params.rho0 = 1e4;
        params.rho_max = 1e4;
        params.tol_cg = 1e-12;
        let out = trust_region_newton(&mut model, &u0, &params).unwrap();
        let err = out.control.add_scaled(-1.0, &model.center).norm();
        if out.log[0].accepted && err <= 1e-9 * model.center.norm().max(1.0) {
            one_step += 1;
        }

        let mut params = default_params();
        params.rho0 = 1e-3;
        params.rho_max = 1e4;
        params.maxit_newton = 30;
        let out = trust_region_newton(&mut model, &u0, &params).unwrap();
        // once the radius exceeds the remaining distance, steps may be interior
        let on_boundary = out
            .log
            .iter()
            .take_while(|r| r.radius_before < 0.5 * model.center.norm())
            .all(|r| r.cg_status == CgStatus::Boundary && (r.step_norm - r.radius_before).abs() <= 1e-10 * r.radius_before);
        if on_boundary {
            boundary += 1;
        }

        let indefinite = random_quadratic(&mut rng, -3.0, 3.0);
        let mut d = indefinite.diagonal.clone();
        d[0][0] = -1.0;
        let g = indefinite.center.clone();
        let rho = rng.gen_range(0.01..10.0);
        let cg = steihaug_cg(
            &g,
            |p| {
                let s = p.samples().iter().zip(&d).map(|(v, d)| [d[0] * v[0], d[1] * v[1]]).collect();
                ControlWaveform::with_dt(0.25, s)
            },
            rho,
            1e-10,
            200,
            1e-14,
        )
        .unwrap();
        let exits = matches!(cg.status, CgStatus::NegativeCurvature | CgStatus::Boundary);
        if exits && (cg.step.norm() - rho).abs() <= 1e-10 * rho {
            negative += 1;
        }
    }
    let pass = one_step == cases && boundary == cases && negative == cases;
    verdict(
        6,
        pass,
        &format!(
            "one-step minimizer {one_step}/{cases}, boundary steps {boundary}/{cases}, indefinite exits on radius {negative}/{cases}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_determinism() {
    let text = "grid.points = 801\ngrid.half_width = 40 mm\ntime.steps = 180\ntime.control_steps = 128\n\
                time.dt = 20 us\nslices.count = 2\nslices.separation = 15 mm\noptimizer.maxit_newton = 3\n";
    let files = ["pulse.txt", "profile.txt", "report.txt", "iterations.txt"];
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for (k, workers) in [1, 4, 4, 1].into_iter().enumerate() {
        let mut config = parse_config(text).unwrap();
        config.workers = workers;
        let out = dir.path().join(format!("run{k}"));
        runner::run_design(&config, &out).unwrap();
        outputs.push(files.map(|f| std::fs::read(out.join(f)).unwrap()));
    }
    let pass = outputs.windows(2).all(|w| w[0] == w[1]);
    verdict(
        7,
        pass,
        &format!("{} files byte-identical over 4 runs with workers 1, 4, 4, 1", files.len()),
    );
    assert!(pass);
}
