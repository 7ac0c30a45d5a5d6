use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use clap::Parser;
use evcharge_core::demand::{fit_batch, generate_history, model_from_weights, read_observations, write_observations};
use evcharge_core::planner::{dp_plan_with_table, greedy_plan, value_function};
use evcharge_core::scenario::{load_scenario, synth_scenario, write_hourly_series};
use evcharge_core::simulate::{compare_policies, run_closed_loop, sweep, write_sweep_csv, SweepInputs};
use evcharge_core::{
    EconomicParams, ElasticityModel, GridConfig, MarketScenario, Plan, Policy, RlsState, SimConfig, SimReport,
    TrueMarket,
};
use serde::Serialize;

use crate::manifest::{default_path, FileDigest, Provenance, RunManifest};
use crate::{
    Cli, Command, CompareArgs, FitArgs, GenHistoryArgs, MarketArgs, PlanArgs, ReplayArgs, ScenarioArgs, SimulateArgs,
    SweepArgs, SynthArgs, SynthModelArgs,
};

pub fn run(cli: Cli, args: Vec<String>) -> Result<()> {
    if let Command::Replay(r) = &cli.command {
        return replay(r);
    }
    let name = command_name(&cli.command);
    let prov = execute(cli.command)?;
    let path = cli.manifest.or_else(|| prov.manifest_path.clone()).unwrap_or_else(|| default_path(&prov.outputs[0]));
    RunManifest::build(name, args, &prov)?.save(&path)
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Synth(_) => "synth",
        Command::SynthModel(_) => "synth-model",
        Command::GenHistory(_) => "gen-history",
        Command::Fit(_) => "fit",
        Command::Plan(_) => "plan",
        Command::Simulate(_) => "simulate",
        Command::Sweep(_) => "sweep",
        Command::Compare(_) => "compare",
        Command::Replay(_) => "replay",
    }
}

fn execute(cmd: Command) -> Result<Provenance> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::SynthModel(a) => synth_model(a),
        Command::GenHistory(a) => gen_history(a),
        Command::Fit(a) => fit(a),
        Command::Plan(a) => plan(a),
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Compare(a) => compare(a),
        Command::Replay(_) => bail!("replay cannot be nested"),
    }
}

fn replay(args: &ReplayArgs) -> Result<()> {
    let recorded = RunManifest::load(&args.from)?;
    std::env::set_current_dir(&recorded.working_dir)
        .with_context(|| format!("entering {}", recorded.working_dir.display()))?;
    let cli = Cli::try_parse_from(std::iter::once("evcharge".to_string()).chain(recorded.args.iter().cloned()))
        .context("recorded arguments no longer parse")?;
    let prov = execute(cli.command)?;
    let outputs = prov.outputs.iter().map(|p| FileDigest::of(p)).collect::<Result<Vec<_>>>()?;
    let mut mismatched = Vec::new();
    for (old, new) in recorded.outputs.iter().zip(&outputs) {
        if old != new {
            mismatched.push(new.path.display().to_string());
        }
    }
    if outputs.len() != recorded.outputs.len() || !mismatched.is_empty() {
        bail!("replay differs from the recorded run: {}", mismatched.join(", "));
    }
    println!("replay reproduced {} output(s), digest {}", outputs.len(), recorded.output_digest);
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_params(path: Option<&Path>) -> Result<EconomicParams> {
    match path {
        Some(p) => Ok(EconomicParams::load(p)?),
        None => Ok(EconomicParams::table1()),
    }
}

fn load_inputs(args: &ScenarioArgs, prov: &mut Provenance) -> Result<(MarketScenario, EconomicParams)> {
    let params = load_params(args.params.as_deref())?;
    let scenario = load_scenario(&args.prices, &args.renewable, &params)?;
    for w in &scenario.warnings {
        eprintln!("warning: {w}");
    }
    prov.inputs.extend([args.prices.clone(), args.renewable.clone()]);
    prov.inputs.extend(args.params.clone());
    prov.params = Some(params);
    Ok((scenario, params))
}

fn load_model(path: &Path, prov: &mut Provenance) -> Result<ElasticityModel> {
    prov.inputs.push(path.to_path_buf());
    Ok(ElasticityModel::load(path)?)
}

fn synth(a: SynthArgs) -> Result<Provenance> {
    let scenario = synth_scenario(a.seed, a.hours, a.profile)?;
    for (path, values) in [(&a.prices, &scenario.wholesale_prices), (&a.renewable, &scenario.renewable)] {
        let mut w = create(path)?;
        write_hourly_series(&mut w, values)?;
        w.flush()?;
    }
    Ok(Provenance { outputs: vec![a.prices, a.renewable], seed: Some(a.seed), ..Default::default() })
}

fn synth_model(a: SynthModelArgs) -> Result<Provenance> {
    let model = ElasticityModel::synthetic(a.seed, a.stations)?;
    write_text(&a.out, &model.to_json())?;
    Ok(Provenance { outputs: vec![a.out], seed: Some(a.seed), ..Default::default() })
}

fn gen_history(a: GenHistoryArgs) -> Result<Provenance> {
    let mut prov = Provenance { seed: Some(a.seed), ..Default::default() };
    let model = load_model(&a.model, &mut prov)?;
    if !(a.price_min < a.price_max) {
        bail!("--price-min must be below --price-max");
    }
    let history = generate_history(&model, a.seed, a.horizons, a.noise_std, (a.price_min, a.price_max))?;
    let mut w = create(&a.out)?;
    write_observations(&mut w, &history)?;
    w.flush()?;
    prov.outputs.push(a.out);
    Ok(prov)
}

fn fit(a: FitArgs) -> Result<Provenance> {
    let file = File::open(&a.observations).with_context(|| format!("opening {}", a.observations.display()))?;
    let history = read_observations(file, a.stations)?;
    if history.is_empty() {
        bail!("{}: no observations", a.observations.display());
    }
    let l = a.stations;
    let mut errors = String::from("horizon,station,error\n");
    let weights: Vec<Vec<f64>> = if a.batch {
        let w = (0..l).map(|j| fit_batch(&history, j, a.ridge)).collect::<Result<Vec<_>, _>>()?;
        for (k, obs) in history.iter().enumerate() {
            let x = obs.regressor();
            for (j, wj) in w.iter().enumerate() {
                let fitted: f64 = x.iter().zip(wj).map(|(a, b)| a * b).sum();
                writeln!(errors, "{},{},{}", k + 1, j + 1, obs.demands[j] - fitted)?;
            }
        }
        w
    } else {
        let mut rls = RlsState::with_gain_scale(l, a.lambda, a.gain_scale)?;
        for (k, obs) in history.iter().enumerate() {
            let x = obs.regressor();
            for j in 0..l {
                let e = rls.update(j, &x, obs.demands[j])?;
                writeln!(errors, "{},{},{}", k + 1, j + 1, e)?;
            }
        }
        rls.all_weights()
    };
    let (model, clamps) = model_from_weights(&weights);
    if clamps.any() {
        eprintln!(
            "warning: clamped own-price coefficients at stations {:?} and intercepts at stations {:?}",
            clamps.diagonal, clamps.intercept
        );
    }
    write_text(&a.out, &model.to_json())?;
    let mut prov = Provenance { inputs: vec![a.observations], outputs: vec![a.out], ..Default::default() };
    if let Some(path) = a.errors {
        write_text(&path, errors.trim_end())?;
        prov.outputs.push(path);
    }
    Ok(prov)
}

fn plan(a: PlanArgs) -> Result<Provenance> {
    let mut prov = Provenance::default();
    let (scenario, params) = load_inputs(&a.scenario, &mut prov)?;
    let model = load_model(&a.model, &mut prov)?;
    let initial = a.scenario.initial_storage.unwrap_or(0.5 * params.capacity);
    let plan: Plan = match a.policy {
        Policy::Greedy => {
            if a.value_table.is_some() {
                bail!("--value-table requires --policy dp");
            }
            greedy_plan(&scenario, &model, &params, initial)?
        }
        Policy::Dp => {
            let table = value_function(&scenario, &model, &params, &GridConfig::with_points(a.scenario.grid))?;
            if let Some(path) = &a.value_table {
                let mut w = create(path)?;
                table.write_csv(&mut w)?;
                w.flush()?;
            }
            dp_plan_with_table(&scenario, &model, &params, initial, &table)?
        }
    };
    if !plan.nonconcave_stages.is_empty() {
        eprintln!("warning: non-concave stage problems at stages {:?}", plan.nonconcave_stages);
    }
    if a.json {
        write_text(&a.out, &plan.to_json())?;
    } else {
        let mut w = create(&a.out)?;
        plan.write_csv(&scenario, &mut w)?;
        w.flush()?;
    }
    println!("{}", plan.summary_line());
    prov.outputs.push(a.out);
    prov.outputs.extend(a.value_table);
    Ok(prov)
}

struct Market {
    scenario: MarketScenario,
    params: EconomicParams,
    truth: TrueMarket,
    initial: ElasticityModel,
    config: SimConfig,
}

fn load_market(a: &MarketArgs, policy: Policy, prov: &mut Provenance) -> Result<Market> {
    let (scenario, params) = load_inputs(&a.scenario, prov)?;
    let true_model = load_model(&a.true_model, prov)?;
    let initial = match &a.initial_model {
        Some(p) => load_model(p, prov)?,
        None => true_model.clone(),
    };
    prov.seed = Some(a.seed);
    let config = SimConfig {
        policy,
        execution: a.execution,
        grid: GridConfig::with_points(a.scenario.grid),
        forgetting: a.lambda,
        gain_scale: a.gain_scale,
        initial_storage: a.scenario.initial_storage,
    };
    Ok(Market {
        scenario,
        params,
        truth: TrueMarket { true_model, noise_std: a.noise_std, seed: a.seed },
        initial,
        config,
    })
}

fn write_report(report: &SimReport, path: &Path, json: bool) -> Result<()> {
    if json {
        write_text(path, &report.to_json())
    } else {
        let mut w = create(path)?;
        report.write_csv(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

fn report_summary(r: &SimReport) -> String {
    format!(
        "{}: total utility {:.4}, total profit {:.4}, total satisfaction {:.4}, cap events {}",
        r.policy,
        r.total_utility,
        r.total_profit,
        r.total_satisfaction,
        r.cap_events.len()
    )
}

fn simulate(a: SimulateArgs) -> Result<Provenance> {
    let mut prov = Provenance::default();
    let m = load_market(&a.market, a.policy, &mut prov)?;
    let report = run_closed_loop(&m.scenario, &m.truth, &m.initial, &m.params, &m.config)?;
    write_report(&report, &a.out, a.json)?;
    println!("{}", report_summary(&report));
    prov.outputs.push(a.out);
    Ok(prov)
}

fn sweep_cmd(a: SweepArgs) -> Result<Provenance> {
    let mut prov = Provenance::default();
    let m = load_market(&a.market, a.policy, &mut prov)?;
    let inputs = SweepInputs {
        scenario: &m.scenario,
        true_market: &m.truth,
        initial_model: &m.initial,
        params: &m.params,
        config: m.config,
        mode: a.mode,
    };
    let rows = sweep(&inputs, a.param, &a.values)?;
    let mut w = create(&a.out)?;
    write_sweep_csv(&mut w, &rows)?;
    w.flush()?;
    prov.outputs.push(a.out);
    Ok(prov)
}

#[derive(Serialize)]
struct ComparisonSummary {
    greedy_total_profit: f64,
    dp_total_profit: f64,
    greedy_total_utility: f64,
    dp_total_utility: f64,
    profit_increase_percent: Option<f64>,
    profit_increase_absolute: f64,
    /// Set when the greedy profit is too close to zero for a percentage.
    baseline_near_zero: bool,
}

fn compare(a: CompareArgs) -> Result<Provenance> {
    let mut prov = Provenance::default();
    let m = load_market(&a.market, Policy::Dp, &mut prov)?;
    let c = compare_policies(&m.scenario, &m.truth, &m.initial, &m.params, &m.config)?;
    let ext = if a.json { "json" } else { "csv" };
    let greedy_path = a.out_dir.join(format!("greedy.{ext}"));
    let dp_path = a.out_dir.join(format!("dp.{ext}"));
    write_report(&c.greedy, &greedy_path, a.json)?;
    write_report(&c.dp, &dp_path, a.json)?;
    let summary = ComparisonSummary {
        greedy_total_profit: c.greedy.total_profit,
        dp_total_profit: c.dp.total_profit,
        greedy_total_utility: c.greedy.total_utility,
        dp_total_utility: c.dp.total_utility,
        profit_increase_percent: c.increase.percent,
        profit_increase_absolute: c.increase.absolute,
        baseline_near_zero: c.increase.percent.is_none(),
    };
    let summary_path = a.out_dir.join("comparison.json");
    write_text(&summary_path, &serde_json::to_string_pretty(&summary)?)?;
    match c.increase.percent {
        Some(p) => {
            println!("profit increase {p:.4}% (dp {:.4} vs greedy {:.4})", c.dp.total_profit, c.greedy.total_profit)
        }
        None => {
            println!("profit increase {:.4} absolute (greedy profit is ~0, percentage undefined)", c.increase.absolute)
        }
    }
    prov.outputs.extend([summary_path, greedy_path, dp_path]);
    prov.manifest_path = Some(a.out_dir.join("manifest.json"));
    Ok(prov)
}
