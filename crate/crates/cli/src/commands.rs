use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rca_core::datagen::{gen_confounded, gen_two_group_series};
use rca_core::edge::universe_size;
use rca_core::em::{em_rca_fit, residual_covariance, IterationRecord};
use rca_core::eval::{precision_recall, roc, Curve, EdgeScoreSet};
use rca_core::glasso::{glasso_fit, kkt_residual, SparsePrecision};
use rca_core::io::{self, fmt_f64};
use rca_core::kernels::{
    center_columns, data_variance, rbf_gram, residual_scores, KernelSpec, TimeGrid,
};
use rca_core::linalg::{cholesky, SymMatrix};
use rca_core::rca::{ppca_fit, rca_fit, second_moment, RankChoice, Role};
use rca_core::stability::{
    stability_select, threshold_edges, EdgePath, Fitter, LambdaGrid, StabilityConfig,
};
use rca_core::{RcaError, Result};
use serde::{Deserialize, Serialize};

use crate::config::{FitMethod, RunConfig, StabilityMethod};
use crate::{
    CheckArgs, Cli, Command, EvalArgs, FitArgs, ResidualArgs, SimKind, SimulateArgs, StabilityArgs,
};

/// Runs the selected subcommand and returns the process exit code.
pub fn run(cli: &Cli) -> Result<u8> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    let out = cli.out.as_path();
    match &cli.command {
        Command::Simulate(args) => simulate(&cfg, args, out),
        Command::Fit(args) => fit(&cfg, args, out),
        Command::Stability(args) => stability(&cfg, args, out),
        Command::Eval(args) => eval(args, out),
        Command::Residual(args) => residual(&cfg, args, out),
        Command::Check(args) => check(&cfg, args, out),
    }
}

fn write_timing(out: &Path, seconds: f64) -> Result<()> {
    io::write_json(
        &out.join("timing.json"),
        &serde_json::json!({ "seconds": seconds }),
    )
}

fn simulate(cfg: &RunConfig, args: &SimulateArgs, out: &Path) -> Result<u8> {
    match args.kind {
        SimKind::Gmrf => {
            let mut spec = cfg.simulate.gmrf.clone();
            if let Some(seed) = cfg.seed {
                spec.seed = seed;
            }
            spec.n = args.n.unwrap_or(spec.n);
            spec.p = args.p.unwrap_or(spec.p);
            spec.q = args.q.unwrap_or(spec.q);
            spec.sparsity = args.sparsity.unwrap_or(spec.sparsity);
            if args.snr.is_some() {
                spec.snr = args.snr;
            }
            let inst = gen_confounded(&spec)?;
            io::write_sim_instance(out, &inst)?;
        }
        SimKind::Series => {
            let mut spec = cfg.simulate.series.clone();
            if let Some(seed) = cfg.seed {
                spec.seed = seed;
            }
            spec.features = args.features.unwrap_or(spec.features);
            spec.differential = args.differential.unwrap_or(spec.differential);
            spec.amplitude = args.amplitude.unwrap_or(spec.amplitude);
            spec.noise_sd = args.noise_sd.unwrap_or(spec.noise_sd);
            let inst = gen_two_group_series(&spec, &TimeGrid::reference())?;
            let header: Vec<String> = (0..spec.features).map(|j| format!("f{j}")).collect();
            io::write_text(&out.join("Y.csv"), &io::matrix_to_csv(&inst.data, &header))?;
            io::write_grid_csv(&out.join("grid.csv"), &inst.grid)?;
            let mut labels = String::from("feature,label\n");
            for (j, &l) in inst.labels.iter().enumerate() {
                labels.push_str(&format!("{j},{}\n", l as u8));
            }
            io::write_text(&out.join("labels.csv"), &labels)?;
            io::write_json(&out.join("meta.json"), &serde_json::json!({ "spec": spec }))?;
        }
    }
    Ok(0)
}

/// Everything `check` needs to re-derive a fit's certificates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub fitter: FitMethod,
    pub data: PathBuf,
    pub n: usize,
    pub p: usize,
    pub column_means: Vec<f64>,
    pub lambda: Option<f64>,
    pub penalize_diagonal: bool,
    pub noise_var: Option<f64>,
    pub rank: Option<usize>,
    pub retained_values: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub objective: Option<f64>,
    pub kkt_residual: Option<f64>,
    pub trace: Vec<IterationRecord>,
    pub decreases: Vec<usize>,
}

fn load_centered(path: &Path) -> Result<(DMatrix<f64>, Vec<f64>)> {
    let raw = io::read_matrix_csv(path)?;
    if raw.nrows() == 0 || raw.ncols() == 0 {
        return Err(RcaError::invalid(format!(
            "{} holds no data",
            path.display()
        )));
    }
    Ok(center_columns(&raw))
}

fn fit(cfg: &RunConfig, args: &FitArgs, out: &Path) -> Result<u8> {
    let mut fc = cfg.fit.clone();
    fc.fitter = args.fitter.unwrap_or(fc.fitter);
    fc.lambda = args.lambda.unwrap_or(fc.lambda);
    if args.rank.is_some() {
        fc.rank = args.rank;
    }
    if args.noise_var.is_some() {
        fc.noise_var = args.noise_var;
        fc.em_rca.noise_var = args.noise_var;
    }
    if let Some(m) = args.max_iter {
        fc.em_rca.max_iter = m;
    }
    if args.sigma.is_some() && fc.fitter != FitMethod::Rca {
        return Err(RcaError::invalid("--sigma only applies to the rca fitter"));
    }

    let (y, means) = load_centered(&args.data)?;
    let (n, p) = y.shape();
    let c = second_moment(&y, Role::Primal);
    let start = Instant::now();
    let header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    let mut model = ModelArtifact {
        fitter: fc.fitter,
        data: args.data.clone(),
        n,
        p,
        column_means: means,
        lambda: None,
        penalize_diagonal: false,
        noise_var: None,
        rank: None,
        retained_values: Vec::new(),
        converged: true,
        iterations: 0,
        objective: None,
        kkt_residual: None,
        trace: Vec::new(),
        decreases: Vec::new(),
    };
    let write_square = |name: &str, m: &SymMatrix| {
        io::write_text(&out.join(name), &io::matrix_to_csv(m.as_matrix(), &header))
    };

    match fc.fitter {
        FitMethod::Glasso => {
            let res = glasso_fit(&c, fc.lambda, &fc.glasso)?;
            model.lambda = Some(fc.lambda);
            model.penalize_diagonal = fc.glasso.penalize_diagonal;
            model.converged = res.converged;
            model.iterations = res.sweeps;
            model.kkt_residual = Some(res.kkt_residual);
            write_square("precision.csv", res.precision.entries())?;
            write_square("sigma.csv", &res.precision.covariance()?)?;
        }
        FitMethod::EmRca => {
            let res = em_rca_fit(&y, fc.lambda, &fc.em_rca)?;
            model.lambda = Some(fc.lambda);
            model.noise_var = Some(res.state.noise_var);
            model.rank = Some(res.state.loadings_w.ncols());
            model.converged = res.converged;
            model.iterations = res.trace.len();
            model.objective = Some(res.objective());
            model.decreases = res.decreases.clone();
            io::write_matrix_csv(&out.join("loadings.csv"), &res.state.loadings_w)?;
            write_square("precision.csv", res.state.precision.entries())?;
            write_square(
                "sigma.csv",
                &residual_covariance(&res.state.precision, res.state.noise_var)?,
            )?;
            model.trace = res.trace;
        }
        FitMethod::Ppca => {
            let noise_var = fc.noise_var.unwrap_or_else(|| c.trace() / (2.0 * p as f64));
            let res = ppca_fit(&c, noise_var, fc.rank.into())?;
            model.noise_var = Some(noise_var);
            model.rank = Some(res.loadings.ncols());
            model.retained_values = res.retained_eigenvalues.iter().copied().collect();
            io::write_matrix_csv(&out.join("loadings.csv"), &res.loadings)?;
            write_square("sigma.csv", &SymMatrix::scaled_identity(p, noise_var))?;
        }
        FitMethod::Rca => {
            let path = args
                .sigma
                .as_ref()
                .ok_or_else(|| RcaError::invalid("the rca fitter needs --sigma"))?;
            let raw = io::read_matrix_csv(path)?;
            if raw.shape() != (p, p) {
                return Err(RcaError::invalid(format!(
                    "sigma is {}x{} but the data has {p} columns",
                    raw.nrows(),
                    raw.ncols()
                )));
            }
            let sigma = SymMatrix::new(raw)?;
            let rank = fc.rank.map_or(RankChoice::Auto, RankChoice::Exactly);
            let res = rca_fit(&c, &sigma, rank, Role::Primal)?;
            model.rank = Some(res.rank());
            model.retained_values = res.retained_values.iter().copied().collect();
            io::write_matrix_csv(&out.join("loadings.csv"), &res.loadings)?;
            write_square("sigma.csv", &sigma)?;
        }
    }
    io::write_json(&out.join("model.json"), &model)?;
    write_timing(out, start.elapsed().as_secs_f64())?;
    if !model.converged {
        let last_change = match model.trace.as_slice() {
            [.., a, b] => ((b.objective - a.objective) / b.objective.abs()).abs(),
            _ => model.kkt_residual.unwrap_or(f64::NAN),
        };
        return Err(RcaError::NoConvergence {
            solver: model.fitter.name(),
            iterations: model.iterations,
            last_change,
        });
    }
    Ok(0)
}

fn stability(cfg: &RunConfig, args: &StabilityArgs, out: &Path) -> Result<u8> {
    let mut sc = cfg.stability.clone();
    sc.fitter = args.fitter.unwrap_or(sc.fitter);
    sc.repeats = args.repeats.unwrap_or(sc.repeats);
    sc.fraction = args.fraction.unwrap_or(sc.fraction);
    sc.threshold = args.threshold.unwrap_or(sc.threshold);
    sc.mode = args.mode.unwrap_or(sc.mode);
    sc.grid.count = args.grid_count.unwrap_or(sc.grid.count);
    sc.grid.lo_exp = args.grid_lo.unwrap_or(sc.grid.lo_exp);
    sc.grid.hi_exp = args.grid_hi.unwrap_or(sc.grid.hi_exp);
    if args.sequential {
        sc.parallel = false;
    }
    if let Some(m) = args.max_iter {
        sc.em_rca.max_iter = m;
    }
    if !(0.0..=1.0).contains(&sc.threshold) {
        return Err(RcaError::invalid(format!(
            "threshold must lie in [0, 1], got {}",
            sc.threshold
        )));
    }
    let config = StabilityConfig {
        repeats: sc.repeats,
        fraction: sc.fraction,
        seed: cfg.seed.unwrap_or(1),
        mode: sc.mode,
        parallel: sc.parallel,
    };
    config.validate()?;
    let grid = LambdaGrid::new(sc.grid.count, sc.grid.lo_exp, sc.grid.hi_exp)?;
    let fitter = match sc.fitter {
        StabilityMethod::Glasso => Fitter::Glasso(sc.glasso),
        StabilityMethod::EmRca => Fitter::EmRca(sc.em_rca),
    };

    let (y, _) = load_centered(&args.data)?;
    let start = Instant::now();
    let path = stability_select(&y, &fitter, &grid, &config)?;
    let seconds = start.elapsed().as_secs_f64();

    io::write_json(&out.join("path.json"), &path)?;
    io::write_text(&out.join("path.csv"), &path.to_csv())?;
    let mut selected = String::from("lambda_index,lambda,i,j\n");
    for k in 0..grid.len() {
        for e in threshold_edges(&path, k, sc.threshold)? {
            selected.push_str(&format!(
                "{k},{},{},{}\n",
                fmt_f64(grid.lambdas()[k]),
                e.0,
                e.1
            ));
        }
    }
    io::write_text(&out.join("selected.csv"), &selected)?;
    write_timing(out, seconds)?;
    Ok(0)
}

fn load_path(path: &Path) -> Result<EdgePath> {
    let ep: EdgePath = io::read_json(path)?;
    let m = universe_size(ep.p);
    let bad = ep.frequencies.len() != ep.grid.len()
        || ep.successes.len() != ep.grid.len()
        || ep.frequencies.iter().any(|row| row.len() != m)
        || ep
            .frequencies
            .iter()
            .flatten()
            .any(|f| !(0.0..=1.0).contains(f));
    if bad {
        return Err(RcaError::Parse {
            path: path.to_path_buf(),
            message: "edge path arrays do not match its grid and node count".into(),
        });
    }
    Ok(ep)
}

#[derive(Debug, Serialize)]
struct MethodSummary {
    label: String,
    fitter: String,
    envelope_auprc: f64,
    mean_auprc: f64,
    per_lambda_auprc: Vec<f64>,
}

fn eval(args: &EvalArgs, out: &Path) -> Result<u8> {
    let truth_path = args
        .truth
        .as_ref()
        .ok_or_else(|| RcaError::invalid("eval needs a true edge list (--truth)"))?;
    let truth = io::read_edges_csv(truth_path)?;
    if truth.is_empty() {
        return Err(RcaError::invalid("the true edge list is empty"));
    }

    let mut table = String::from("method,curve,lambda_index,lambda,auprc\n");
    let mut summaries = Vec::new();
    let mut prevalence = None;
    let mut used = BTreeSet::new();
    for path_file in &args.paths {
        let path = load_path(path_file)?;
        let mut label = path.fitter.clone();
        let mut k = 2;
        while used.contains(&label) {
            label = format!("{}_{k}", path.fitter);
            k += 1;
        }
        used.insert(label.clone());

        let score = |scores: Vec<f64>| -> Result<Curve> {
            precision_recall(&EdgeScoreSet::from_dense(path.p, scores, truth.clone())?)
        };
        let mut long = String::from("lambda_index,lambda,recall,precision\n");
        let mut per_lambda = Vec::new();
        for (k, row) in path.frequencies.iter().enumerate() {
            let curve = score(row.clone())?;
            let lambda = fmt_f64(path.grid.lambdas()[k]);
            for &(r, p) in &curve.points {
                long.push_str(&format!("{k},{lambda},{},{}\n", fmt_f64(r), fmt_f64(p)));
            }
            table.push_str(&format!(
                "{label},lambda,{k},{lambda},{}\n",
                fmt_f64(curve.area)
            ));
            per_lambda.push(curve.area);
        }
        let envelope = score(path.max_envelope())?;
        let mean = score(path.mean_frequency())?;
        table.push_str(&format!("{label},envelope,,,{}\n", fmt_f64(envelope.area)));
        table.push_str(&format!("{label},mean,,,{}\n", fmt_f64(mean.area)));
        io::write_text(&out.join(format!("{label}_pr.csv")), &long)?;
        io::write_text(
            &out.join(format!("{label}_envelope.csv")),
            &io::curve_to_csv(&envelope, "recall", "precision"),
        )?;
        io::write_text(
            &out.join(format!("{label}_mean.csv")),
            &io::curve_to_csv(&mean, "recall", "precision"),
        )?;
        prevalence.get_or_insert(truth.len() as f64 / universe_size(path.p) as f64);
        summaries.push(MethodSummary {
            label,
            fitter: path.fitter.clone(),
            envelope_auprc: envelope.area,
            mean_auprc: mean.area,
            per_lambda_auprc: per_lambda,
        });
    }
    io::write_text(&out.join("auprc.csv"), &table)?;
    io::write_json(
        &out.join("eval.json"),
        &serde_json::json!({ "prevalence": prevalence, "methods": summaries }),
    )?;
    Ok(0)
}

fn read_labels(path: &Path, features: usize) -> Result<Vec<bool>> {
    let text = io::read_text(path)?;
    let mut labels = vec![None; features];
    for (r, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = || RcaError::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: expected feature,label", r + 1),
        };
        let (f, l) = line.split_once(',').ok_or_else(parse_err)?;
        let f: usize = f.trim().parse().map_err(|_| parse_err())?;
        let l = match l.trim() {
            "1" | "true" => true,
            "0" | "false" => false,
            _ => return Err(parse_err()),
        };
        if f >= features {
            return Err(RcaError::invalid(format!(
                "label for feature {f} but the data has {features}"
            )));
        }
        labels[f] = Some(l);
    }
    labels
        .into_iter()
        .enumerate()
        .map(|(j, l)| l.ok_or_else(|| RcaError::invalid(format!("feature {j} has no label"))))
        .collect()
}

fn residual(cfg: &RunConfig, args: &ResidualArgs, out: &Path) -> Result<u8> {
    let spec = KernelSpec {
        lengthscale: args.lengthscale.unwrap_or(cfg.residual.lengthscale),
        jitter_fraction: args.jitter.unwrap_or(cfg.residual.jitter_fraction),
    };
    let (y, means) = load_centered(&args.data)?;
    let grid = io::read_grid_csv(&args.grid)?;
    if grid.len() != y.nrows() {
        return Err(RcaError::invalid(format!(
            "time grid has {} points but the data has {} rows",
            grid.len(),
            y.nrows()
        )));
    }
    let variance = data_variance(&y);
    let gram = rbf_gram(&grid, &spec, variance)?;
    let res = residual_scores(&y, &gram)?;

    let mut table = String::from("feature,score\n");
    for (j, s) in res.scores.iter().enumerate() {
        table.push_str(&format!("{j},{}\n", fmt_f64(*s)));
    }
    io::write_text(&out.join("scores.csv"), &table)?;
    let mut auc = None;
    if let Some(lp) = &args.labels {
        let labels = read_labels(lp, y.ncols())?;
        let curve = roc(&res.scores, &labels)?;
        io::write_text(
            &out.join("roc.csv"),
            &io::curve_to_csv(&curve, "fpr", "tpr"),
        )?;
        auc = Some(curve.area);
    }
    io::write_json(
        &out.join("residual.json"),
        &serde_json::json!({
            "rank": res.rank,
            "values": res.values,
            "lengthscale": spec.lengthscale,
            "jitter_fraction": spec.jitter_fraction,
            "data_variance": variance,
            "column_means": means,
            "auc": auc,
        }),
    )?;
    Ok(0)
}

#[derive(Debug, Serialize)]
struct CheckItem {
    name: &'static str,
    value: f64,
    tolerance: f64,
    pass: bool,
}

/// `‖C Σ⁻¹ W − W (I + Wᵀ Σ⁻¹ W)‖_F / ‖C Σ⁻¹ W‖_F`, zero for an empty `W`.
pub fn stationarity_residual(c: &SymMatrix, sigma: &SymMatrix, w: &DMatrix<f64>) -> Result<f64> {
    if w.ncols() == 0 {
        return Ok(0.0);
    }
    let sw = cholesky(sigma)?.solve(w);
    let lhs = c.as_matrix() * &sw;
    let rhs = w * (DMatrix::identity(w.ncols(), w.ncols()) + w.tr_mul(&sw));
    Ok((&lhs - rhs).norm() / lhs.norm().max(f64::MIN_POSITIVE))
}

fn check(cfg: &RunConfig, args: &CheckArgs, out: &Path) -> Result<u8> {
    let dir = &args.model;
    let model: ModelArtifact = io::read_json(&dir.join("model.json"))?;
    let tol = cfg.check;
    let raw = io::read_matrix_csv(&model.data)?;
    if raw.shape() != (model.n, model.p) || model.column_means.len() != model.p {
        return Err(RcaError::Parse {
            path: dir.join("model.json"),
            message: "recorded shape does not match the data file".into(),
        });
    }
    let mut y = raw;
    for (j, mut col) in y.column_iter_mut().enumerate() {
        col.add_scalar_mut(-model.column_means[j]);
    }
    let c = second_moment(&y, Role::Primal);
    let p = model.p;
    let read_square = |name: &str| -> Result<SymMatrix> {
        let path = dir.join(name);
        let m = io::read_matrix_csv(&path)?;
        if m.shape() != (p, p) {
            return Err(RcaError::Parse {
                path,
                message: format!("expected a {p}x{p} matrix"),
            });
        }
        SymMatrix::new(m).map_err(|e| RcaError::Parse {
            path: dir.join(name),
            message: e.to_string(),
        })
    };

    let mut items = Vec::new();
    let pd_item = |name: &'static str, m: &SymMatrix| {
        let ok = cholesky(m).is_ok();
        CheckItem {
            name,
            value: if ok { 1.0 } else { 0.0 },
            tolerance: 1.0,
            pass: ok,
        }
    };
    let sigma = read_square("sigma.csv")?;
    items.push(pd_item("sigma_positive_definite", &sigma));

    if model.fitter != FitMethod::Glasso {
        let path = dir.join("loadings.csv");
        let mut w = io::read_matrix_csv(&path)?;
        if w.ncols() == 0 {
            w = DMatrix::zeros(p, 0);
        }
        if w.nrows() != p {
            return Err(RcaError::Parse {
                path,
                message: format!("expected {p} rows"),
            });
        }
        let value = if items[0].pass {
            stationarity_residual(&c, &sigma, &w)?
        } else {
            f64::INFINITY
        };
        items.push(CheckItem {
            name: "gep_residual",
            value,
            tolerance: tol.gep_tol,
            pass: value < tol.gep_tol,
        });
    }
    if matches!(model.fitter, FitMethod::Glasso | FitMethod::EmRca) {
        let prec = read_square("precision.csv")?;
        let item = pd_item("precision_positive_definite", &prec);
        let pd = item.pass;
        items.push(item);
        if model.fitter == FitMethod::Glasso && pd {
            let lambda = model.lambda.ok_or_else(|| RcaError::Parse {
                path: dir.join("model.json"),
                message: "glasso model has no lambda".into(),
            })?;
            let value = kkt_residual(
                &SparsePrecision::new(prec)?,
                &c,
                lambda,
                model.penalize_diagonal,
            )?;
            items.push(CheckItem {
                name: "kkt_residual",
                value,
                tolerance: tol.kkt_tol,
                pass: value <= tol.kkt_tol,
            });
        }
    }

    let pass = items.iter().all(|i| i.pass);
    io::write_json(
        &out.join("check.json"),
        &serde_json::json!({ "fitter": model.fitter, "pass": pass, "checks": items }),
    )?;
    for i in &items {
        println!(
            "{} {:<28} {:e} (tolerance {:e})",
            if i.pass { "ok  " } else { "FAIL" },
            i.name,
            i.value,
            i.tolerance
        );
    }
    Ok(if pass { 0 } else { 1 })
}
