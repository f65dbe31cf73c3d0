use clap::{Parser, Subcommand};
use convexflow::io::{
    parse_instance, trace_line, FlowJson, ParsedInstance, PotentialJson, PriceJson, SolutionJson,
    SpendingJson,
};
use convexflow::oracle::{kkt_check, kkt_check_capacitated, quadratic_objective, KktResult};
use convexflow::rational::{format_rat, parse_rat, Rat};
use convexflow::scaling::{run_basic, run_enhanced, Potentials, Solution, SolveOutcome, TraceEvent};
use convexflow::{
    build_shmyrev, build_spending, excess, extract_equilibrium, uncapacitate, CostBackend,
    ErrValue, FisherBackend, FlowNetwork, OracleMode, Pseudoflow, QuadraticBackend, ReductionMap,
    RevealedArcSet,
};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "convexflow", about = "Exact separable convex minimum-cost flow solver")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Solve an instance file and write the solution JSON.
    Solve {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// `enhanced` (terminates with an exact optimum) or `basic`
        /// (fixed number of scaling phases, approximate).
        #[arg(long, default_value = "enhanced")]
        mode: String,
        /// Number of scaling phases for `--mode basic`.
        #[arg(long)]
        phase_budget: Option<usize>,
        /// Write the event trace as JSON lines.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Re-check the solution against the instance before writing it.
        #[arg(long)]
        verify: bool,
    },
    /// Check a solution file against its instance; exit 4 on mismatch.
    Verify {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        solution: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.cmd {
        Cmd::Solve { input, output, mode, phase_budget, trace, verify } => {
            solve_command(&input, &output, &mode, phase_budget, trace.as_deref(), verify)
        }
        Cmd::Verify { instance, solution } => verify_command(&instance, &solution),
    };
    match code {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn read(path: &std::path::Path) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_text(path: &std::path::Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn write_trace(path: &std::path::Path, events: &[TraceEvent]) -> Result<(), String> {
    let mut out = String::new();
    for ev in events {
        out.push_str(&trace_line(ev));
        out.push('\n');
    }
    write_text(path, &out)
}

fn potentials_json(pot: &Potentials, nodes: usize) -> Vec<PotentialJson> {
    (0..nodes)
        .map(|node| match pot.mode {
            OracleMode::Additive => PotentialJson {
                node,
                value: Some(format_rat(&pot.values[node])),
                mu: None,
            },
            OracleMode::Multiplicative => PotentialJson {
                node,
                value: None,
                mu: Some(format_rat(&pot.values[node])),
            },
        })
        .collect()
}

fn solve_command(
    input: &std::path::Path,
    output: &std::path::Path,
    mode: &str,
    phase_budget: Option<usize>,
    trace: Option<&std::path::Path>,
    verify: bool,
) -> Result<ExitCode, String> {
    if !matches!(mode, "enhanced" | "basic") {
        return Err(format!("unknown mode {mode:?}; use enhanced or basic"));
    }
    if mode == "basic" && phase_budget.is_none() {
        return Err("--phase-budget is required with --mode basic".into());
    }
    let parsed = parse_instance(&read(input)?).map_err(|e| e.to_string())?;

    match parsed {
        ParsedInstance::Quadratic(inst) => {
            let (reduced, map) = uncapacitate(&inst).map_err(|e| e.to_string())?;
            let net = convexflow::network::with_strong_connectivity(reduced);
            if mode == "basic" {
                let budget = phase_budget.unwrap();
                return run_basic_mode(&net, &QuadraticBackend, budget, output, trace, |sol| {
                    quadratic_solution_json(&inst, &map, &net, sol, "approximate", false)
                });
            }
            let outcome = run_enhanced(&net, &QuadraticBackend).map_err(|e| e.to_string())?;
            match outcome {
                SolveOutcome::Unbounded => {
                    emit_simple(output, "unbounded")?;
                    Ok(ExitCode::from(3))
                }
                SolveOutcome::Infeasible { solution, .. } => {
                    if let Some(t) = trace {
                        write_trace(t, &solution.events)?;
                    }
                    emit_simple(output, "infeasible")?;
                    Ok(ExitCode::from(2))
                }
                SolveOutcome::Optimal(solution) => {
                    if let Some(t) = trace {
                        write_trace(t, &solution.events)?;
                    }
                    if verify {
                        let (flows, pots) = original_coordinates(&inst, &map, &solution);
                        kkt_check_capacitated(&inst, &flows, &pots)
                            .map_err(|e| format!("self-check failed: {e}"))?;
                    }
                    let json = quadratic_solution_json(&inst, &map, &net, &solution, "optimal", true);
                    write_text(output, &serde_json::to_string_pretty(&json).unwrap())?;
                    Ok(ExitCode::from(0))
                }
            }
        }
        ParsedInstance::FisherLinear(mkt) => {
            let (net, shmap) = build_shmyrev(&mkt).map_err(|e| e.to_string())?;
            solve_market(&net, shmap, mode, phase_budget, output, trace, verify)
        }
        ParsedInstance::FisherSpending(mkt) => {
            let (net, shmap) = build_spending(&mkt).map_err(|e| e.to_string())?;
            solve_market(&net, shmap, mode, phase_budget, output, trace, verify)
        }
    }
}

fn solve_market(
    net: &FlowNetwork,
    shmap: convexflow::fisher::ShmyrevMap,
    mode: &str,
    phase_budget: Option<usize>,
    output: &std::path::Path,
    trace: Option<&std::path::Path>,
    verify: bool,
) -> Result<ExitCode, String> {
    let backend = FisherBackend { map: shmap };
    if mode == "basic" {
        let budget = phase_budget.unwrap();
        return run_basic_mode(net, &backend, budget, output, trace, |sol| SolutionJson {
            status: "approximate".into(),
            flow: flow_json(&sol.flow),
            potentials: potentials_json(&sol.potentials, net.node_count()),
            prices: None,
            spending: None,
            objective: None,
            phases: sol.phases,
            revealed_arcs: sol.revealed.clone(),
        });
    }
    let outcome = run_enhanced(net, &backend).map_err(|e| e.to_string())?;
    let solution = match outcome {
        SolveOutcome::Optimal(s) => s,
        SolveOutcome::Unbounded => {
            emit_simple(output, "unbounded")?;
            return Ok(ExitCode::from(3));
        }
        SolveOutcome::Infeasible { .. } => {
            emit_simple(output, "infeasible")?;
            return Ok(ExitCode::from(2));
        }
    };
    if let Some(t) = trace {
        write_trace(t, &solution.events)?;
    }
    // Extraction verifies clearing and best-bundle conditions exactly.
    let eq = extract_equilibrium(net, &backend.map, &solution).map_err(|e| e.to_string())?;
    if verify {
        if let KktResult::Violation { .. } = kkt_check(net, &solution.flow, &solution.potentials) {
            return Err("self-check failed: KKT violation".into());
        }
    }
    let json = SolutionJson {
        status: "optimal".into(),
        flow: flow_json(&solution.flow),
        potentials: potentials_json(&solution.potentials, net.node_count()),
        prices: Some(
            eq.prices
                .iter()
                .enumerate()
                .map(|(good, p)| PriceJson { good, price: format_rat(p) })
                .collect(),
        ),
        spending: Some(
            eq.spending
                .iter()
                .map(|r| SpendingJson {
                    buyer: r.buyer,
                    good: r.good,
                    segment: r.segment,
                    amount: format_rat(&r.amount),
                })
                .collect(),
        ),
        objective: None,
        phases: solution.phases,
        revealed_arcs: solution.revealed.clone(),
    };
    write_text(output, &serde_json::to_string_pretty(&json).unwrap())?;
    Ok(ExitCode::from(0))
}

fn run_basic_mode<B: CostBackend>(
    net: &FlowNetwork,
    backend: &B,
    budget: usize,
    output: &std::path::Path,
    trace: Option<&std::path::Path>,
    to_json: impl Fn(&Solution) -> SolutionJson,
) -> Result<ExitCode, String> {
    let zero = Pseudoflow::zeros(net.arc_count());
    let empty = RevealedArcSet::new(net);
    let err0 = backend.error_value(net, &zero, &empty).map_err(|e| e.to_string())?;
    let err0 = match err0 {
        ErrValue::Infinite => {
            emit_simple(output, "unbounded")?;
            return Ok(ExitCode::from(3));
        }
        ErrValue::Finite(v) => v,
    };
    let denom = convexflow::rational::rat_usize(2 * net.node_count() + net.nonlinear_arc_count());
    let mut delta0 = excess(net, &zero) / denom;
    if err0 > delta0 {
        delta0 = err0;
    }
    use num::Signed;
    if !delta0.is_positive() {
        return Err("zero flow is already optimal; use --mode enhanced".into());
    }
    let run = run_basic(net, &delta0, budget).map_err(|e| e.to_string())?;
    if let Some(t) = trace {
        write_trace(t, &run.events)?;
    }
    let solution = Solution {
        flow: run.flow,
        potentials: run.potentials,
        revealed: Vec::new(),
        phases: budget,
        events: run.events,
    };
    let json = to_json(&solution);
    write_text(output, &serde_json::to_string_pretty(&json).unwrap())?;
    Ok(ExitCode::from(0))
}

fn flow_json(flow: &Pseudoflow) -> Vec<FlowJson> {
    flow.values
        .iter()
        .enumerate()
        .map(|(arc, v)| FlowJson { arc, value: format_rat(v) })
        .collect()
}

fn original_coordinates(
    inst: &convexflow::CapacitatedInstance,
    map: &ReductionMap,
    solution: &Solution,
) -> (Vec<Rat>, Vec<Rat>) {
    let flows: Vec<Rat> =
        (0..inst.arcs.len()).map(|e| map.original_flow(e, &solution.flow)).collect();
    let pots: Vec<Rat> =
        (0..inst.demands.len()).map(|v| solution.potentials.values[v].clone()).collect();
    (flows, pots)
}

fn quadratic_solution_json(
    inst: &convexflow::CapacitatedInstance,
    map: &ReductionMap,
    _net: &FlowNetwork,
    solution: &Solution,
    status: &str,
    with_objective: bool,
) -> SolutionJson {
    let (flows, pots) = original_coordinates(inst, map, solution);
    SolutionJson {
        status: status.into(),
        flow: flows
            .iter()
            .enumerate()
            .map(|(arc, v)| FlowJson { arc, value: format_rat(v) })
            .collect(),
        potentials: pots
            .iter()
            .enumerate()
            .map(|(node, v)| PotentialJson { node, value: Some(format_rat(v)), mu: None })
            .collect(),
        prices: None,
        spending: None,
        objective: if with_objective {
            Some(format_rat(&quadratic_objective(inst, &flows)))
        } else {
            None
        },
        phases: solution.phases,
        revealed_arcs: solution.revealed.clone(),
    }
}

fn emit_simple(output: &std::path::Path, status: &str) -> Result<(), String> {
    let json = SolutionJson {
        status: status.into(),
        flow: Vec::new(),
        potentials: Vec::new(),
        prices: None,
        spending: None,
        objective: None,
        phases: 0,
        revealed_arcs: Vec::new(),
    };
    write_text(output, &serde_json::to_string_pretty(&json).unwrap())
}

fn verify_command(instance: &std::path::Path, solution: &std::path::Path) -> Result<ExitCode, String> {
    let parsed = parse_instance(&read(instance)?).map_err(|e| e.to_string())?;
    let sol: SolutionJson = serde_json::from_slice(&read(solution)?)
        .map_err(|e| format!("solution JSON: {e}"))?;

    let fail = |msg: String| -> Result<ExitCode, String> {
        eprintln!("verification failed: {msg}");
        Ok(ExitCode::from(4))
    };

    match parsed {
        ParsedInstance::Quadratic(inst) => {
            let flows = match collect_values(&sol.flow, inst.arcs.len()) {
                Ok(f) => f,
                Err(e) => return fail(e),
            };
            let pots = match collect_potentials(&sol.potentials, inst.demands.len(), false) {
                Ok(p) => p,
                Err(e) => return fail(e),
            };
            match kkt_check_capacitated(&inst, &flows, &pots) {
                Ok(()) => Ok(ExitCode::from(0)),
                Err(e) => fail(e),
            }
        }
        ParsedInstance::FisherLinear(mkt) => {
            let (net, shmap) = build_shmyrev(&mkt).map_err(|e| e.to_string())?;
            verify_market_solution(&net, &shmap, &sol, fail)
        }
        ParsedInstance::FisherSpending(mkt) => {
            let (net, shmap) = build_spending(&mkt).map_err(|e| e.to_string())?;
            verify_market_solution(&net, &shmap, &sol, fail)
        }
    }
}

fn verify_market_solution(
    net: &FlowNetwork,
    shmap: &convexflow::fisher::ShmyrevMap,
    sol: &SolutionJson,
    fail: impl Fn(String) -> Result<ExitCode, String>,
) -> Result<ExitCode, String> {
    let flows = match collect_values(&sol.flow, net.arc_count()) {
        Ok(f) => f,
        Err(e) => return fail(e),
    };
    let pots = match collect_potentials(&sol.potentials, net.node_count(), true) {
        Ok(p) => p,
        Err(e) => return fail(e),
    };
    let flow = Pseudoflow { values: flows };
    let potentials = Potentials { mode: OracleMode::Multiplicative, values: pots };

    // Conservation and dual feasibility.
    let r = convexflow::network::rho(net, &flow);
    for v in 0..net.node_count() {
        if r[v] != net.demands[v] {
            return fail(format!("conservation fails at node {v}"));
        }
    }
    use num::Signed;
    if flow.values.iter().any(|x| x.is_negative()) {
        return fail("negative arc flow".into());
    }
    if let KktResult::Violation { key, .. } = kkt_check(net, &flow, &potentials) {
        return fail(format!(
            "KKT violated on arc {} ({})",
            key.arc,
            if key.backward { "backward" } else { "forward" }
        ));
    }

    // Market clearing and best bundles, from the flow itself.
    let reconstructed = Solution {
        flow,
        potentials,
        revealed: Vec::new(),
        phases: sol.phases,
        events: Vec::new(),
    };
    let eq = match extract_equilibrium(net, shmap, &reconstructed) {
        Ok(eq) => eq,
        Err(e) => return fail(e.to_string()),
    };
    // Declared prices must match the flow-implied ones.
    if let Some(prices) = &sol.prices {
        for p in prices {
            if p.good >= eq.prices.len() {
                return fail(format!("price entry for unknown good {}", p.good));
            }
            let declared = parse_rat(&p.price).map_err(|e| e.to_string())?;
            if declared != eq.prices[p.good] {
                return fail(format!("declared price of good {} is not the cleared one", p.good));
            }
        }
    }
    Ok(ExitCode::from(0))
}

fn collect_values(entries: &[FlowJson], count: usize) -> Result<Vec<Rat>, String> {
    let mut out = vec![None; count];
    for e in entries {
        if e.arc >= count || out[e.arc].is_some() {
            return Err(format!("flow entry for arc {} is out of range or repeated", e.arc));
        }
        out[e.arc] = Some(parse_rat(&e.value)?);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or(format!("flow entry missing for arc {i}")))
        .collect()
}

fn collect_potentials(
    entries: &[PotentialJson],
    count: usize,
    multiplicative: bool,
) -> Result<Vec<Rat>, String> {
    let mut out = vec![None; count];
    for e in entries {
        if e.node >= count || out[e.node].is_some() {
            return Err(format!("potential entry for node {} is out of range or repeated", e.node));
        }
        let field = if multiplicative { &e.mu } else { &e.value };
        let text = field
            .as_ref()
            .ok_or(format!("potential entry for node {} misses its value", e.node))?;
        out[e.node] = Some(parse_rat(text)?);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| v.ok_or(format!("potential entry missing for node {i}")))
        .collect()
}
