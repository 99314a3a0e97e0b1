use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;

use quadmem::data::{
    gen_synthetic, load_dataset, load_idx, load_params, pca_project, save_dataset, save_params, write_trace,
    ParamsBundle,
};
use quadmem::diagnostics::{landscape_report_capped, stationarity_check_capped, x_tensor_matrix};
use quadmem::features::{
    default_feature_count, feature_norm_bound, smooth_inputs, train_three_layer, z_singular_certificate,
    z_tensor_matrix, RandomFeatureLayer, ThreeLayerConfig,
};
use quadmem::linalg;
use quadmem::model::{Dataset, TwoLayerParams};
use quadmem::optim::{
    AdamConfig, BatchSpec, LrDecay, OptimizerChoice, StepRule, TwoLayerRun, TwoLayerTrainConfig,
};
use quadmem::Error;

use crate::{
    Command, DataArgs, GenArgs, LandscapeArgs, OptimArgs, OptimizerKind, SpectraArgs, SpectraMatrix, Train2Args,
    Train3Args,
};

pub fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Degenerate(_)) => 2,
        Some(Error::NumericalFailure { .. }) => 3,
        _ => 1,
    }
}

pub fn run(command: &Command) -> Result<()> {
    match command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train2(a) => cmd_train2(a),
        Command::Train3(a) => cmd_train3(a),
        Command::Landscape(a) => cmd_landscape(a),
        Command::Spectra(a) => cmd_spectra(a),
    }
}

/// Ordered `key=value` lines.
#[derive(Default)]
struct KeyValues(Vec<(String, String)>);

impl KeyValues {
    fn put(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.0.push((key.to_string(), value.to_string()));
        self
    }

    fn put_f64(&mut self, key: &str, value: f64) -> &mut Self {
        self.put(key, format!("{value:?}"))
    }

    fn render(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()).with_context(|| format!("writing {}", path.display()))
    }
}

fn base_meta(command: &str) -> KeyValues {
    let mut meta = KeyValues::default();
    meta.put("command", command)
        .put("version", env!("CARGO_PKG_VERSION"))
        .put("argv", std::env::args().collect::<Vec<_>>().join(" "));
    meta
}

fn prepare_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_gen(a: &GenArgs) -> Result<()> {
    let data = gen_synthetic(a.n, a.d, a.seed)?;
    prepare_out(&a.out)?;
    save_dataset(&a.out.join("dataset.bin"), &data)?;
    let mut report = KeyValues::default();
    report.put("n", data.n()).put("d", data.d());
    report.put_f64("B", data.input_bound()).put_f64("Y", data.label_bound());
    match x_tensor_matrix(&data, 2) {
        Ok(x) => {
            report.put_f64("sigma_min_X", x.sigma_min).put("X_full_rank", x.full_rank);
        }
        Err(Error::ResourceLimit(msg)) => {
            report.put("sigma_min_X", format!("skipped ({msg})"));
        }
        Err(e) => return Err(e.into()),
    }
    report.write(&a.out.join("report.txt"))?;
    let mut meta = base_meta("gen");
    meta.put("n", a.n).put("d", a.d).put("seed_data", a.seed);
    meta.write(&a.out.join("meta.txt"))?;
    print!("{}", report.render());
    Ok(())
}

fn load_source(a: &DataArgs, meta: &mut KeyValues) -> Result<Dataset> {
    let data = if let Some(path) = &a.data {
        meta.put("data_source", format!("file:{}", path.display()));
        load_dataset(path).with_context(|| format!("loading {}", path.display()))?
    } else if let (Some(images), Some(labels)) = (&a.idx_images, &a.idx_labels) {
        meta.put("data_source", format!("idx:{}:{}", images.display(), labels.display()));
        let mut data = load_idx(images, labels)?;
        if let Some(limit) = a.limit {
            let n = limit.min(data.n());
            data = Dataset::new(data.inputs().rows(0, n).into_owned(), data.labels().rows(0, n).into_owned())?;
            meta.put("limit", n);
        }
        if let Some(k) = a.pca {
            let pca = pca_project(&data, k)?;
            meta.put("pca", k).put_f64("pca_explained_variance", pca.explained_variance_ratio);
            data = pca.projected;
        }
        meta.put("normalized_rows", true);
        data.normalize_rows()?
    } else {
        let (Some(n), Some(d)) = (a.n, a.d) else {
            bail!(Error::InvalidArgument("give --data, --idx-images/--idx-labels, or --n and --d".into()));
        };
        meta.put("data_source", "synthetic").put("n", n).put("d", d).put("seed_data", a.seed_data);
        gen_synthetic(n, d, a.seed_data)?
    };
    match a.label_scale {
        Some(s) if !s.is_finite() => bail!(Error::InvalidArgument(format!("--label-scale must be finite, got {s}"))),
        Some(s) => {
            meta.put_f64("label_scale", s);
            let labels = data.labels() * s;
            Ok(data.with_labels(labels)?)
        }
        None => Ok(data),
    }
}

fn add_input_noise(data: Dataset, a: &DataArgs, seed: u64, meta: &mut KeyValues) -> Result<Dataset> {
    match a.input_noise {
        Some(std) if std > 0.0 => {
            meta.put_f64("input_noise_std", std)
                .put("input_noise_seed", seed)
                .put("input_noise_order", "after row normalization");
            let smoothed = smooth_inputs(&data, std * std, seed)?;
            Ok(data.with_inputs(smoothed.inputs().clone())?)
        }
        Some(std) if std < 0.0 => bail!(Error::InvalidArgument(format!("--input-noise must be >= 0, got {std}"))),
        _ => Ok(data),
    }
}

fn optimizer_choice(o: &OptimArgs) -> Result<OptimizerChoice> {
    let rule = match o.step {
        Some(eta) => StepRule::Fixed(eta),
        None => StepRule::Theorem,
    };
    Ok(match o.optimizer {
        OptimizerKind::Pgd => OptimizerChoice::Pgd(rule),
        OptimizerKind::Gd => OptimizerChoice::Gd(rule),
        OptimizerKind::Adam => {
            let batch = if o.batch_size == 0 { BatchSpec::Full } else { BatchSpec::MiniBatch(o.batch_size) };
            let decay = match (o.lr_decay, o.lr_decay_every) {
                (Some(factor), Some(every_epochs)) => Some(LrDecay { factor, every_epochs }),
                _ => None,
            };
            OptimizerChoice::Adam(AdamConfig { lr: o.lr, batch, decay, ..AdamConfig::default() })
        }
    })
}

fn train_config(o: &OptimArgs, width: usize, eps: f64, trial: u64) -> Result<TwoLayerTrainConfig> {
    if o.trials == 0 {
        bail!(Error::InvalidArgument("--trials must be at least 1".into()));
    }
    Ok(TwoLayerTrainConfig {
        c: o.c,
        delta: o.delta,
        max_iters: o.max_iters,
        seed: o.seed_optimizer + trial,
        optimizer: optimizer_choice(o)?,
        record_every: o.record_every.max(1),
        stop_at_target: o.stop_at_target,
        target_check_every: o.target_check_every,
        init_radius: o.init_radius,
        ..TwoLayerTrainConfig::new(width, eps)
    })
}

fn put_optim_meta(meta: &mut KeyValues, o: &OptimArgs, cfg: &TwoLayerTrainConfig) {
    meta.put("optimizer", format!("{:?}", cfg.optimizer))
        .put_f64("epsilon", cfg.epsilon)
        .put_f64("c", cfg.c)
        .put_f64("delta", cfg.delta)
        .put("max_iters", cfg.max_iters)
        .put("record_every", cfg.record_every)
        .put("stop_at_target", cfg.stop_at_target)
        .put("target_check_every", cfg.target_check_every)
        .put("seed_optimizer", cfg.seed)
        .put_f64("init_radius", cfg.init_radius)
        .put("trials", o.trials);
}

fn put_run_meta(meta: &mut KeyValues, run: &TwoLayerRun) {
    let t = &run.theorem;
    meta.put_f64("sigma", t.sigma)
        .put_f64("f0", t.f0)
        .put_f64("rho", t.rho)
        .put_f64("gamma", t.gamma)
        .put_f64("ell", t.smoothness)
        .put_f64("delta_f", t.delta_f)
        .put_f64("norm_sq_bound", t.norm_sq_bound)
        .put_f64("eta", run.step);
    if let Some(d) = &run.derived {
        meta.put_f64("chi", d.chi)
            .put_f64("r_pert", d.radius)
            .put_f64("g_thres", d.g_thres)
            .put_f64("f_thres", d.f_thres)
            .put_f64("t_thres", d.t_thres)
            .put_f64("eta_theorem", d.eta);
    }
}

/// Largest `d·r` for which training runs append a landscape report. The
/// dense eigensolve grows cubically, so bigger runs go through `landscape`.
const REPORT_HESSIAN_CAP: usize = 4_000;

fn put_run_report(report: &mut KeyValues, run: &TwoLayerRun, data: &Dataset) -> Result<()> {
    report.put_f64("final_loss", run.final_loss)
        .put("status", format!("{:?}", run.status))
        .put("iterations", run.iterations)
        .put_f64("max_norm_sq", run.max_norm_sq)
        .put("norm_violations", run.norm_violations);
    let cap = REPORT_HESSIAN_CAP;
    if run.params.d() * run.params.r() > cap {
        report.put("landscape", format!("skipped (d·r above {cap}; use the landscape command)"));
        return Ok(());
    }
    let land = landscape_report_capped(&run.params, data, cap)?;
    for line in land.to_key_value().lines() {
        report.0.push(line.split_once('=').map(|(k, v)| (k.into(), v.into())).unwrap());
    }
    let t = &run.theorem;
    let st = stationarity_check_capped(&run.params, data, t.gamma, t.epsilon, t.rho, cap)?;
    report.put_f64("grad_norm_g", st.grad_norm)
        .put_f64("lambda_min_g", st.lambda_min_g)
        .put("is_eps_sosp", st.is_eps_sosp);
    Ok(())
}

fn trial_dir(out: &Path, trials: u64, trial: u64) -> PathBuf {
    if trials == 1 {
        out.to_path_buf()
    } else {
        out.join(format!("trial-{trial:03}"))
    }
}

fn run_trials(trials: u64, f: impl Fn(u64) -> Result<f64> + Sync) -> Result<()> {
    let results: Vec<(u64, Result<f64>)> = (0..trials).into_par_iter().map(|t| (t, f(t))).collect();
    let mut first_err = None;
    for (t, res) in results {
        match res {
            Ok(loss) if trials == 1 => println!("final_loss={loss:?}"),
            Ok(loss) => println!("trial={t} final_loss={loss:?}"),
            Err(e) => {
                eprintln!("trial {t} failed: {e:#}");
                first_err.get_or_insert(e);
            }
        }
    }
    first_err.map_or(Ok(()), Err)
}

fn cmd_train2(a: &Train2Args) -> Result<()> {
    let o = &a.optim;
    run_trials(o.trials, |trial| {
        let dir = trial_dir(&o.out, o.trials, trial);
        prepare_out(&dir)?;
        let mut meta = base_meta("train2");
        let data = load_source(&a.data, &mut meta)?;
        let data = add_input_noise(data, &a.data, 3 + trial, &mut meta)?;
        let width = a.r.unwrap_or(2 * data.d() + 2);
        let mut cfg = train_config(o, width, o.eps.unwrap_or(1e-4), trial)?;
        cfg.force_width = a.force;
        meta.put("trial", trial).put("r", width).put("force", a.force);
        put_optim_meta(&mut meta, o, &cfg);
        save_dataset(&dir.join("dataset.bin"), &data)?;

        info!("trial {trial}: training r = {width} on n = {}, d = {}", data.n(), data.d());
        let run = quadmem::optim::train_two_layer(&data, &cfg)?;
        put_run_meta(&mut meta, &run);
        meta.write(&dir.join("meta.txt"))?;
        save_params(&dir.join("params.bin"), &ParamsBundle { weights: run.params.weights().clone(), features: None })?;
        write_trace(&dir.join("trace.csv"), &run.trace)?;
        let mut report = KeyValues::default();
        put_run_report(&mut report, &run, &data)?;
        report.write(&dir.join("report.txt"))?;
        Ok(run.final_loss)
    })
}

fn cmd_train3(a: &Train3Args) -> Result<()> {
    let o = &a.optim;
    if a.data.input_noise.is_some() {
        bail!(Error::InvalidArgument("train3 smooths inputs itself; use --v instead of --input-noise".into()));
    }
    run_trials(o.trials, |trial| {
        let dir = trial_dir(&o.out, o.trials, trial);
        prepare_out(&dir)?;
        let mut meta = base_meta("train3");
        let data = load_source(&a.data, &mut meta)?;
        let eps = o.eps.unwrap_or(1e-3);
        let mut cfg = ThreeLayerConfig::new(a.p, eps);
        cfg.k = a.k;
        cfg.v = a.v;
        cfg.feature_seed = a.seed_features + trial;
        cfg.noise_seed = a.seed_noise + trial;
        cfg.identity_features = a.identity_features;
        cfg.train = train_config(o, 0, eps, trial)?;
        let k = if a.identity_features { data.d() } else { a.k.unwrap_or_else(|| default_feature_count(data.n())) };
        meta.put("trial", trial)
            .put("p", a.p)
            .put("k", k)
            .put("r", 2 * k + 2)
            .put_f64("v", a.v)
            .put("seed_features", cfg.feature_seed)
            .put("seed_noise", cfg.noise_seed)
            .put("identity_features", a.identity_features);
        put_optim_meta(&mut meta, o, &cfg.train);
        save_dataset(&dir.join("dataset.bin"), &data)?;

        info!("trial {trial}: three-layer run with k = {k}, p = {}", a.p);
        let out = train_three_layer(&data, &cfg)?;
        put_run_meta(&mut meta, &out.run);
        meta.write(&dir.join("meta.txt"))?;
        save_dataset(&dir.join("features.bin"), &out.features)?;
        save_params(
            &dir.join("params.bin"),
            &ParamsBundle {
                weights: out.run.params.weights().clone(),
                features: Some((out.layer.matrix().clone(), out.layer.p())),
            },
        )?;
        write_trace(&dir.join("trace.csv"), &out.run.trace)?;

        let mut report = KeyValues::default();
        let cert = out.certificate;
        report.put_f64("sigma_min_Z", cert.sigma_min).put("Z_full_rank", cert.positive);
        match cert.theory_bound {
            Some(b) => report.put_f64("sigma_min_Z_theory_bound", b),
            None => report.put("sigma_min_Z_theory_bound", "vacuous"),
        };
        let norms = feature_norm_bound(&out.layer, &out.smoothed, o.delta)?;
        report.put_f64("feature_norm_max", norms.max_norm)
            .put_f64("feature_norm_bound", norms.bound)
            .put("feature_norm_violated", norms.violated);
        put_run_report(&mut report, &out.run, &out.features)?;
        report.write(&dir.join("report.txt"))?;
        Ok(out.run.final_loss)
    })
}

fn cmd_landscape(a: &LandscapeArgs) -> Result<()> {
    let data = load_dataset(&a.data).with_context(|| format!("loading {}", a.data.display()))?;
    let bundle = load_params(&a.params).with_context(|| format!("loading {}", a.params.display()))?;
    let params = TwoLayerParams::new(bundle.weights)?;
    let mut report = KeyValues::default();
    let land = landscape_report_capped(&params, &data, a.hessian_cap)?;
    for line in land.to_key_value().lines() {
        report.0.push(line.split_once('=').map(|(k, v)| (k.into(), v.into())).unwrap());
    }
    if let (Some(eps), Some(rho)) = (a.eps, a.rho) {
        let st = stationarity_check_capped(&params, &data, a.gamma, eps, rho, a.hessian_cap)?;
        report.put_f64("grad_norm_g", st.grad_norm)
            .put_f64("lambda_min_g", st.lambda_min_g)
            .put_f64("grad_margin", st.grad_margin)
            .put_f64("curvature_margin", st.curvature_margin)
            .put("is_eps_sosp", st.is_eps_sosp);
    }
    prepare_out(&a.out)?;
    report.write(&a.out.join("report.txt"))?;
    let mut meta = base_meta("landscape");
    meta.put("data", a.data.display())
        .put("params", a.params.display())
        .put_f64("gamma", a.gamma)
        .put("hessian_cap", a.hessian_cap);
    meta.write(&a.out.join("meta.txt"))?;
    print!("{}", report.render());
    Ok(())
}

fn cmd_spectra(a: &SpectraArgs) -> Result<()> {
    let mut meta = base_meta("spectra");
    let data = load_source(&a.data, &mut meta)?;
    let mut report = KeyValues::default();
    let matrix: DMatrix<f64> = match a.matrix {
        SpectraMatrix::X => {
            meta.put("matrix", "X").put("q", a.q);
            x_tensor_matrix(&data, a.q)?.matrix
        }
        SpectraMatrix::Z => {
            let k = a.k.unwrap_or_else(|| default_feature_count(data.n()));
            meta.put("matrix", "Z")
                .put("p", a.p)
                .put("k", k)
                .put_f64("v", a.v)
                .put("seed_features", a.seed_features)
                .put("seed_noise", a.seed_noise);
            let layer = RandomFeatureLayer::new(k, data.d(), a.p, a.seed_features)?;
            let smoothed = smooth_inputs(&data, a.v, a.seed_noise)?;
            match z_singular_certificate(&layer, &smoothed, a.delta) {
                Ok(cert) => match cert.theory_bound {
                    Some(b) => report.put_f64("theory_bound", b),
                    None => report.put("theory_bound", "vacuous"),
                },
                Err(Error::Precondition(msg)) => report.put("theory_bound", format!("n/a ({msg})")),
                Err(e) => return Err(e.into()),
            };
            z_tensor_matrix(&layer, &smoothed)?
        }
    };
    let (rows, cols) = matrix.shape();
    report.put("rows", rows).put("cols", cols);
    if rows < cols {
        report.put_f64("sigma_min", 0.0).put("leave_one_out", "n/a (more columns than rows)");
    } else {
        let sigma = linalg::smallest_singular(&matrix)?;
        let loo = linalg::leave_one_out(&matrix)?;
        let lower = loo / (cols as f64).sqrt();
        let slack = 1e-8;
        report.put_f64("sigma_min", sigma)
            .put_f64("leave_one_out", loo)
            .put_f64("sandwich_lower", lower)
            .put("sandwich_holds", lower <= sigma + slack && sigma <= loo + slack);
    }
    prepare_out(&a.out)?;
    report.write(&a.out.join("report.txt"))?;
    meta.write(&a.out.join("meta.txt"))?;
    print!("{}", report.render());
    Ok(())
}
