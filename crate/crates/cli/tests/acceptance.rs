//! Acceptance suite. Prints one line per criterion and exits nonzero if a hard criterion fails.
//!
//! Run with `cargo test -p overlapsim-cli --test acceptance`.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use overlapsim_cli::output::{read_events, read_trajectory, write_events, TRAJECTORY_BIN};
use overlapsim_cli::{generate, run, RunConfig, SceneKind, TransportKind, WorkerServer};
use overlapsim_core::coordinator::{Coordinator, CoordinatorConfig, InProcWorkers, RunReport, StepEvent};
use overlapsim_core::dynamics::mlcp::RowKind;
use overlapsim_core::dynamics::{
    assemble_mlcp, collide_scene, jointed_pairs, solve_pgs, solve_pgs_observed, BodySlotInput, Engine,
    MlcpProblem, SolverConfig,
};
use overlapsim_core::overlap::{compute_weights, Branch, Mutation};
use overlapsim_core::scenes::{bowl, bridge, hanging_chain, CHAIN_LINK_LENGTH};
use overlapsim_core::{
    BodyId, BodyState, ConstraintGraph, OverlapParams, Scene, WorkerAssignment, WorkerId, WorkerSet,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// Outcome of one criterion.
enum Verdict {
    Pass,
    Fail,
    /// Soft target missed; reported but does not fail the suite.
    SoftFail,
    NotEvaluated,
}

struct Line {
    id: u32,
    name: &'static str,
    verdict: Verdict,
    detail: String,
}

impl Line {
    fn hard(id: u32, name: &'static str, ok: bool, detail: String) -> Self {
        Self { id, name, verdict: if ok { Verdict::Pass } else { Verdict::Fail }, detail }
    }

    fn soft(id: u32, name: &'static str, ok: bool, detail: String) -> Self {
        Self { id, name, verdict: if ok { Verdict::Pass } else { Verdict::SoftFail }, detail }
    }

    fn print(&self) {
        let tag = match self.verdict {
            Verdict::Pass => "PASS",
            Verdict::Fail => "FAIL",
            Verdict::SoftFail => "SOFT-FAIL",
            Verdict::NotEvaluated => "NOT-EVALUATED",
        };
        println!("[{tag}] {:>2} {}: {}", self.id, self.name, self.detail);
    }
}

fn coordinator(scene: &Scene, solver: SolverConfig, config: CoordinatorConfig) -> (Coordinator, InProcWorkers) {
    let (links, workers) = InProcWorkers::spawn(scene.num_workers);
    let c = Coordinator::new(Arc::new(scene.clone()), links, solver, config).expect("coordinator starts");
    (c, workers)
}

fn finish(c: Coordinator, w: InProcWorkers) -> RunReport {
    let report = c.shutdown();
    w.join();
    report
}

fn bits(states: &[BodyState]) -> Vec<u64> {
    states.iter().flat_map(|s| s.to_array()).map(f64::to_bits).collect()
}

fn joint_separations(scene: &Scene, s: &[BodyState]) -> Vec<f64> {
    scene.joints.iter().map(|j| j.separation(&s[j.body_a.index()], &s[j.body_b.index()])).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn median(v: &mut [usize]) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        (v[n / 2 - 1] + v[n / 2]) as f64 / 2.0
    }
}

// 1 ------------------------------------------------------------------------------------------

fn baseline_equivalence() -> Line {
    let dir = TempDir::new().unwrap();
    let scenes = [
        ("chain", SceneKind::Chain { links: 20 }),
        ("bridge", SceneKind::Bridge { planks: 24 }),
        ("bowl", SceneKind::Bowl { spheres: 120 }),
        ("building", SceneKind::Building { rows: 3, cols: 4, projectiles: 3 }),
    ];
    let steps = 300;
    let mut mismatches = Vec::new();
    for (name, kind) in &scenes {
        let scene = generate(kind, 1, 7);
        let path = dir.path().join(format!("{name}.json"));
        scene.save(&path).unwrap();
        let out = dir.path().join(name);
        run(&RunConfig { scene: path, steps, out_dir: out.clone(), ..RunConfig::default() }).unwrap();
        let frames = read_trajectory(&out.join(TRAJECTORY_BIN)).unwrap();

        let mut engine = Engine::standalone(Arc::new(scene), SolverConfig::default());
        let mut first_bad = None;
        for (k, (step, states)) in frames.iter().enumerate() {
            if k > 0 {
                engine.step().unwrap();
            }
            if *step != k as u64 || bits(states) != bits(engine.states()) {
                first_bad = Some(k);
                break;
            }
        }
        if frames.len() != steps as usize + 1 {
            first_bad = Some(frames.len());
        }
        if let Some(k) = first_bad {
            mismatches.push(format!("{name} diverges at frame {k}"));
        }
    }

    let scene = generate(&SceneKind::Bowl { spheres: 200 }, 1, 11);
    let path = dir.path().join("timed.json");
    scene.save(&path).unwrap();
    let t = Instant::now();
    run(&RunConfig { scene: path, steps: 500, out_dir: dir.path().join("timed"), ..RunConfig::default() })
        .unwrap();
    let secs = t.elapsed().as_secs_f64();

    let ok = mismatches.is_empty() && secs < 10.0;
    let detail = if mismatches.is_empty() {
        format!("4 scenes x {steps} steps bitwise equal to standalone engine; 200 bodies x 500 steps in {secs:.2} s (limit 10 s)")
    } else {
        format!("{}; timed run {secs:.2} s", mismatches.join(", "))
    };
    Line::hard(1, "baseline equivalence", ok, detail)
}

// 2 ------------------------------------------------------------------------------------------

fn chain_coupling() -> Line {
    let mut scene = hanging_chain(6, 2);
    scene.timestep = 0.002;
    let mut worst = [0.0f64; 2];
    for (k, sharing) in [true, false].into_iter().enumerate() {
        let config = CoordinatorConfig {
            params: OverlapParams { gamma: 0, beta: 2 },
            sharing,
            ..CoordinatorConfig::default()
        };
        let (mut c, w) = coordinator(&scene, SolverConfig::default(), config);
        c.simulate_observed(2000, |v| {
            let m = joint_separations(&scene, v.states).into_iter().fold(0.0, f64::max);
            worst[k] = worst[k].max(m);
        })
        .unwrap();
        finish(c, w);
    }
    let rel = worst.map(|x| x / CHAIN_LINK_LENGTH);
    Line::hard(
        2,
        "chain coupling",
        rel[0] <= 0.10 && rel[1] > 0.50,
        format!(
            "max joint separation / link length: shared {:.4} (limit 0.10), ablation {:.2} (must exceed 0.50)",
            rel[0], rel[1]
        ),
    )
}

// 3 ------------------------------------------------------------------------------------------

/// Mean joint separation over all joints and steps, plus the initial overlap set.
fn bridge_violation(scene: &Scene, gamma: usize, beta: usize, steps: u64) -> (f64, BTreeSet<BodyId>) {
    let config = CoordinatorConfig { params: OverlapParams { gamma, beta }, ..CoordinatorConfig::default() };
    let (mut c, w) = coordinator(scene, SolverConfig::default(), config);
    let overlap = c.assignment().overlap_set();
    let mut sum = 0.0;
    c.simulate_observed(steps, |v| sum += mean(&joint_separations(scene, v.states))).unwrap();
    finish(c, w);
    (sum / steps as f64, overlap)
}

fn gamma_monotonicity() -> Line {
    let scene = bridge(24, 2);
    let gammas = [0, 2, 4];
    // deep enough that every shared body reaches both sides at gamma 4, so no weight falls
    // back to the 1/beta floor
    let beta = 8;
    let (violation, overlap): (Vec<f64>, Vec<BTreeSet<BodyId>>) =
        gammas.iter().map(|&g| bridge_violation(&scene, g, beta, 2000)).unzip();
    let shallow: Vec<f64> = gammas.iter().map(|&g| bridge_violation(&scene, g, 2, 2000).0).collect();
    let monotone = violation.windows(2).all(|p| p[1] <= p[0] * 1.05);
    let nested = overlap.windows(2).all(|p| p[0].is_subset(&p[1]));
    Line::hard(
        3,
        "gamma error monotonicity",
        monotone && nested,
        format!(
            "24-plank bridge, 2000 steps, beta {beta}: mean joint violation at gamma 0/2/4 {:.3e} / {:.3e} / {:.3e} m (5% noise allowed); overlap sizes {} / {} / {} nested: {nested}; for reference beta 2 gives {:.3e} / {:.3e} / {:.3e} m",
            violation[0],
            violation[1],
            violation[2],
            overlap[0].len(),
            overlap[1].len(),
            overlap[2].len(),
            shallow[0],
            shallow[1],
            shallow[2]
        ),
    )
}

// 4 ------------------------------------------------------------------------------------------

/// Unit-weight shortest paths from `root`, no depth cap.
fn bfs(adj: &[Vec<usize>], root: usize) -> Vec<Option<usize>> {
    let mut d = vec![None; adj.len()];
    d[root] = Some(0);
    let mut q = VecDeque::from([root]);
    while let Some(v) = q.pop_front() {
        for &n in &adj[v] {
            if d[n].is_none() {
                d[n] = Some(d[v].unwrap() + 1);
                q.push_back(n);
            }
        }
    }
    d
}

fn weight_oracle() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut checked, mut skipped, mut failures) = (0usize, 0usize, Vec::new());
    for case in 0..1000 {
        let n = rng.gen_range(2..=50);
        let k = rng.gen_range(2..=4u32);
        let beta = rng.gen_range(1..=6);
        let mut adj = vec![Vec::new(); n];
        let mut edges = BTreeSet::new();
        for v in 1..n {
            let u = rng.gen_range(0..v);
            edges.insert((u, v));
        }
        for _ in 0..rng.gen_range(0..n) {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            if a != b {
                edges.insert((a.min(b), a.max(b)));
            }
        }
        let mut g = ConstraintGraph::new((0..n as u32).map(BodyId));
        for &(a, b) in &edges {
            adj[a].push(b);
            adj[b].push(a);
            g.add_joint_edge(BodyId(a as u32), BodyId(b as u32)).unwrap();
        }
        let mut sets: Vec<WorkerSet> = (0..n).map(|_| WorkerSet::from([WorkerId(rng.gen_range(0..k))])).collect();
        for s in sets.iter_mut() {
            if rng.gen_bool(0.3) {
                let mut extra: Vec<u32> = (0..k).collect();
                extra.shuffle(&mut rng);
                s.extend(extra[..rng.gen_range(1..k as usize)].iter().map(|&w| WorkerId(w)));
            }
        }
        let mut assignment = WorkerAssignment::new(k);
        for (v, s) in sets.iter().enumerate() {
            assignment.set_workers(BodyId(v as u32), s.clone());
        }

        for o in (0..n).filter(|&v| sets[v].len() > 1) {
            let dist = bfs(&adj, o);
            let nearest: BTreeMap<WorkerId, Option<usize>> = sets[o]
                .iter()
                .map(|&w| {
                    let d = (0..n).filter(|&v| sets[v].len() == 1 && sets[v].contains(&w)).filter_map(|v| dist[v]).min();
                    (w, d)
                })
                .collect();
            if nearest.values().any(|d| d.map_or(true, |d| d > beta)) {
                skipped += 1;
                continue;
            }
            let inv: BTreeMap<WorkerId, Ratio<i64>> =
                nearest.iter().map(|(&w, d)| (w, Ratio::new(1, d.unwrap() as i64))).collect();
            let total: Ratio<i64> = inv.values().copied().sum();
            let got = compute_weights(BodyId(o as u32), &g, &assignment, beta).unwrap();
            checked += 1;
            let mut ok = got.len() == inv.len();
            for (w, r) in &inv {
                let exact = r / total;
                let expect = *exact.numer() as f64 / *exact.denom() as f64;
                ok &= got.get(*w).is_some_and(|x| (x - expect).abs() <= 1e-12);
            }
            if !ok && failures.len() < 3 {
                failures.push(format!("case {case} body {o}"));
            }
        }
    }
    Line::hard(
        4,
        "weight oracle",
        failures.is_empty() && checked > 0,
        format!(
            "1000 random graphs: {checked} overlap bodies matched the rational oracle within 1e-12, {skipped} skipped (a distance beyond beta){}",
            if failures.is_empty() { String::new() } else { format!("; mismatches: {}", failures.join(", ")) }
        ),
    )
}

// 5, 6, 7, 11 -------------------------------------------------------------------------------

struct BowlRun {
    scene: Scene,
    report: RunReport,
    initial: WorkerAssignment,
    /// Worker sets of every dynamic body after each step, as bitmasks in body order.
    snapshots: Vec<Vec<u8>>,
    weight_sets: usize,
    worst_weight_sum: f64,
    min_weight: f64,
    worst_quat: f64,
    worst_quat_all: f64,
    empty_sets: usize,
}

fn mask(ws: &WorkerSet) -> u8 {
    ws.iter().fold(0, |m, w| m | (1 << w.0))
}

fn run_bowl() -> BowlRun {
    let scene = bowl(300, 4, 1);
    let config = CoordinatorConfig { params: OverlapParams { gamma: 1, beta: 2 }, ..CoordinatorConfig::default() };
    let (mut c, w) = coordinator(&scene, SolverConfig::default(), config);
    let initial = c.assignment().clone();
    let dynamic: Vec<BodyId> = scene.dynamic_ids().collect();
    let mut r = BowlRun {
        scene: scene.clone(),
        report: RunReport::default(),
        initial,
        snapshots: Vec::new(),
        weight_sets: 0,
        worst_weight_sum: 0.0,
        min_weight: f64::INFINITY,
        worst_quat: 0.0,
        worst_quat_all: 0.0,
        empty_sets: 0,
    };
    c.simulate_observed(2000, |v| {
        for bw in v.weights.values() {
            r.weight_sets += 1;
            let sum: f64 = bw.iter().map(|(_, x)| x).sum();
            r.worst_weight_sum = r.worst_weight_sum.max((sum - 1.0).abs());
            r.min_weight = bw.iter().map(|(_, x)| x).fold(r.min_weight, f64::min);
        }
        for &b in &dynamic {
            let e = (v.states[b.index()].orientation.norm() - 1.0).abs();
            r.worst_quat_all = r.worst_quat_all.max(e);
            if v.assignment.is_overlap(b) {
                r.worst_quat = r.worst_quat.max(e);
            }
        }
        r.empty_sets += dynamic.iter().filter(|&&b| v.assignment.workers(b).is_empty()).count();
        r.snapshots.push(dynamic.iter().map(|&b| mask(v.assignment.workers(b))).collect());
    })
    .unwrap();
    r.report = finish(c, w);
    r
}

fn convexity(r: &BowlRun) -> Line {
    let ok = r.worst_weight_sum <= 1e-12 && r.min_weight >= 0.0 && r.worst_quat <= 1e-9;
    Line::hard(
        5,
        "convexity and quaternion invariants",
        ok,
        format!(
            "bowl 300 x 4 workers x 2000 steps: {} weight sets, max |sum-1| {:.1e} (limit 1e-12), min weight {:.3}; max ||q|-1| over shared bodies {:.1e}, over all bodies {:.1e} (limit 1e-9); sign-flip covered by unit tests",
            r.weight_sets,
            r.worst_weight_sum,
            if r.min_weight.is_finite() { r.min_weight } else { 0.0 },
            r.worst_quat,
            r.worst_quat_all
        ),
    )
}

/// Re-derives which rule must fire for the logged inputs and checks the logged outcome.
fn audit_event(e: &StepEvent, live: &WorkerAssignment, gamma: usize) -> Result<(), String> {
    let ev = &e.event;
    let (a, b) = (ev.contact.0, ev.contact.1);
    let [ba, bb] = &ev.before;
    let [aa, ab] = &ev.after;
    if live.workers(a) != ba || live.workers(b) != bb {
        return Err("logged worker sets disagree with the replayed assignment".into());
    }
    for (w, &load) in &ev.worker_load {
        if live.load(*w) != load {
            return Err(format!("logged load of worker {w} is {load}, replay says {}", live.load(*w)));
        }
    }
    let set_load = |s: &WorkerSet| s.iter().map(|w| ev.worker_load[w]).sum::<usize>();
    if ev.set_load != [set_load(ba), set_load(bb)] {
        return Err("set loads are not sums of worker loads".into());
    }

    let disjoint = ba.is_disjoint(bb);
    let expected = if disjoint {
        Branch::Absorb
    } else if ba.len() > 1 && bb.len() == 1 && !ev.bridge[0] {
        Branch::Release(a)
    } else if bb.len() > 1 && ba.len() == 1 && !ev.bridge[1] {
        Branch::Release(b)
    } else if ba == bb && ba.len() > 1 {
        let s = ba.iter().copied().min_by_key(|w| (ev.worker_load[w], *w)).unwrap();
        Branch::Collapse(s)
    } else {
        return Err("an event was logged for a contact that matches no rule".into());
    };
    if ev.branch != expected {
        return Err(format!("fired {} but preconditions select {}", ev.branch, expected));
    }

    let union: WorkerSet = ba.union(bb).copied().collect();
    match ev.branch {
        Branch::Absorb => {
            let (root_after, other_before, other_after) =
                if ev.set_load[0] <= ev.set_load[1] { (ab, ba, aa) } else { (aa, bb, ab) };
            if *root_after != union {
                return Err("absorbed body does not end in the union of both sets".into());
            }
            let other_ok = if gamma == 0 {
                other_after == other_before
            } else {
                other_before.is_subset(other_after) && other_after.is_subset(&union)
            };
            if !other_ok {
                return Err("partner set changed beyond growth".into());
            }
            if ev.mutations.iter().any(|m| !matches!(m, Mutation::Activate { .. }) || !union.contains(&m.worker())) {
                return Err("absorb issued a deactivation or a foreign worker".into());
            }
        }
        Branch::Release(x) => {
            let (x_before, x_after, keep, other_after) =
                if x == a { (ba, aa, bb, ab) } else { (bb, ab, ba, aa) };
            if x_after != keep || other_after != keep {
                return Err("released body is not left on its partner's single worker".into());
            }
            let dropped: BTreeSet<Mutation> = x_before
                .difference(keep)
                .map(|&worker| Mutation::Deactivate { body: x, worker })
                .collect();
            if ev.mutations.iter().copied().collect::<BTreeSet<_>>() != dropped {
                return Err("release mutations differ from the dropped workers".into());
            }
        }
        Branch::Collapse(s) => {
            let only = WorkerSet::from([s]);
            if *aa != only || *ab != only {
                return Err("collapse did not leave both bodies on the chosen worker".into());
            }
            if ev.mutations.iter().any(|m| !matches!(m, Mutation::Deactivate { .. })) {
                return Err("collapse issued an activation".into());
            }
        }
    }
    Ok(())
}

fn load_balance_replay(r: &BowlRun, dir: &Path) -> Line {
    let log = dir.join("events.jsonl");
    write_events(&r.report.events, &log).unwrap();
    let events = read_events(&log).unwrap();
    let gamma = r.report.params_gamma;

    let mut live = WorkerAssignment::from_scene(&r.scene);
    let mut violations = Vec::new();
    for m in &r.report.initial_mutations {
        m.apply(&mut live).unwrap();
    }
    if live != r.initial {
        violations.push("initial mutations do not rebuild the starting assignment".to_string());
    }
    let dynamic: Vec<BodyId> = r.scene.dynamic_ids().collect();
    let mut counts: BTreeMap<&'static str, usize> = BTreeMap::new();
    let (mut bridge_released, mut mutations) = (0usize, 0usize);
    let mut next = events.iter().peekable();
    for (step, snapshot) in r.snapshots.iter().enumerate() {
        while let Some(e) = next.next_if(|e| e.step == step as u64) {
            if let Err(why) = audit_event(e, &live, gamma) {
                violations.push(format!("step {step} contact {:?}: {why}", e.event.contact));
            }
            if let Branch::Release(x) = e.event.branch {
                let idx = if x == e.event.contact.0 { 0 } else { 1 };
                bridge_released += e.event.bridge[idx] as usize;
            }
            *counts
                .entry(match e.event.branch {
                    Branch::Absorb => "absorb",
                    Branch::Release(_) => "release",
                    Branch::Collapse(_) => "collapse",
                })
                .or_default() += 1;
            for m in &e.event.mutations {
                mutations += 1;
                match m.apply(&mut live) {
                    Ok(true) => {}
                    Ok(false) => violations.push(format!("step {step}: mutation {m} changed nothing")),
                    Err(err) => violations.push(format!("step {step}: mutation {m} rejected: {err}")),
                }
            }
            let [aa, ab] = &e.event.after;
            if live.workers(e.event.contact.0) != aa || live.workers(e.event.contact.1) != ab {
                violations.push(format!("step {step}: mutations do not produce the logged after-sets"));
            }
        }
        let replayed: Vec<u8> = dynamic.iter().map(|&b| mask(live.workers(b))).collect();
        if &replayed != snapshot {
            violations.push(format!("step {step}: replayed assignment differs from the run"));
            break;
        }
    }
    if next.next().is_some() {
        violations.push("events logged past the last step".into());
    }
    let ok = violations.is_empty() && r.empty_sets == 0 && bridge_released == 0 && !events.is_empty();
    Line::hard(
        6,
        "load-balance postconditions",
        ok,
        format!(
            "{} events ({}), {mutations} mutations replayed; {} violations, {} empty worker sets, {bridge_released} bridge bodies released{}",
            events.len(),
            counts.iter().map(|(k, v)| format!("{k} {v}")).collect::<Vec<_>>().join(", "),
            violations.len(),
            r.empty_sets,
            violations.first().map(|v| format!("; first: {v}")).unwrap_or_default()
        ),
    )
}

fn load_distribution(r: &BowlRun) -> Line {
    let tail = &r.report.frames[r.report.frames.len() - 500..];
    let ratios: Vec<f64> = tail
        .iter()
        .map(|f| {
            let mut counts: Vec<usize> = f.workers.iter().map(|w| w.active_bodies).collect();
            let max = *counts.iter().max().unwrap() as f64;
            max / median(&mut counts)
        })
        .collect();
    let worst = ratios.iter().copied().fold(0.0, f64::max);
    let last: Vec<usize> = tail.last().unwrap().workers.iter().map(|w| w.active_bodies).collect();
    Line::soft(
        7,
        "load distribution",
        worst <= 1.5,
        format!("last 500 steps: worst max/median {worst:.3}, mean {:.3} (target 1.5); final counts {last:?}", mean(&ratios)),
    )
}

fn residual_steady_state(r: &BowlRun) -> Line {
    let res: Vec<f64> = r.report.frames.iter().map(|f| f.lcp_residual_total).collect();
    let early = mean(&res[500..1000]);
    let late = mean(&res[res.len() - 500..]);
    let ratio = late / early;
    Line::hard(
        11,
        "residual steady state",
        (0.5..=2.0).contains(&ratio),
        format!("mean total LCP residual steps 500-999 {early:.3e}, last 500 {late:.3e}, ratio {ratio:.3} (allowed 0.5 to 2)"),
    )
}

// 8 ------------------------------------------------------------------------------------------

fn spd(n: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    &m * m.transpose() + DMatrix::identity(n, n) * 0.5
}

fn solver_correctness() -> Line {
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // (a) random dense bilateral systems plus an assembled three-joint chain
    let mut worst_a: f64 = 0.0;
    for case in 0..200 {
        let n = 1 + case % 10;
        let a = spd(n, &mut rng);
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let p = MlcpProblem::from_dense(
            a.clone(),
            b.clone(),
            DVector::from_element(n, f64::NEG_INFINITY),
            DVector::from_element(n, f64::INFINITY),
        );
        let got = solve_pgs(&p, 200_000, 1e-13).unwrap().lambda;
        let direct = a.lu().solve(&b).unwrap();
        worst_a = worst_a.max((got - direct).amax());
    }
    let chain = hanging_chain(3, 1);
    let states = chain.initial_states();
    let inputs: Vec<BodySlotInput<'_>> =
        chain.bodies.iter().map(|b| BodySlotInput { body: b, state: states[b.id.index()] }).collect();
    let joints: Vec<_> = chain.joints.iter().collect();
    let asm = assemble_mlcp(&inputs, &joints, &[], chain.timestep, chain.gravity, &SolverConfig::default(), None);
    let p = &asm.problem;
    let got = solve_pgs(p, 200_000, 1e-14).unwrap().lambda;
    let direct = p.dense_a().lu().solve(&p.b).unwrap();
    let rows = p.dim();
    worst_a = worst_a.max((got - direct).amax());

    // (b) one sphere resting on the ground
    let (m, radius, h, g) = (2.0, 0.3, 0.002, 9.81);
    let scene = Scene::from_json(&format!(
        r#"{{"gravity":[0,-{g},0],"timestep_s":{h},"bodies":[
            {{"id":0,"shape":{{"type":"plane","normal":[0,1,0],"offset":0}},"mass":0,"position":[0,0,0]}},
            {{"id":1,"shape":{{"type":"sphere","radius":{radius}}},"mass":{m},"position":[0,{radius},0],"partition":0}}]}}"#
    ))
    .unwrap();
    let states = scene.initial_states();
    let contacts = collide_scene(&scene, &states, [BodyId(1)], &jointed_pairs(&scene));
    let inputs: Vec<BodySlotInput<'_>> =
        scene.bodies.iter().map(|b| BodySlotInput { body: b, state: states[b.id.index()] }).collect();
    let asm = assemble_mlcp(&inputs, &[], &contacts, h, scene.gravity, &SolverConfig::default(), None);
    let normal = asm.problem.kinds.iter().position(|k| *k == RowKind::ContactNormal);
    let lambda_err = match (contacts.len(), normal) {
        (1, Some(i)) => {
            let l = solve_pgs(&asm.problem, 1000, 1e-14).unwrap().lambda;
            (l[i] - h * m * g).abs()
        }
        _ => f64::INFINITY,
    };

    // (c) boxed problems with friction rows following their normal rows
    let mut out_of_bounds = 0usize;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=12);
        let a = spd(n, &mut rng);
        let b = DVector::from_fn(n, |_, _| rng.gen_range(-2.0..2.0));
        let lo = DVector::from_fn(n, |_, _| -rng.gen_range(0.0..1.0));
        let hi = DVector::from_fn(n, |_, _| rng.gen_range(0.0..1.0));
        let mut p = MlcpProblem::from_dense(a, b, lo, hi);
        for i in 1..n {
            if rng.gen_bool(0.3) && !matches!(p.kinds[i - 1], RowKind::Friction { .. }) {
                p.lo[i - 1] = 0.0;
                p.hi[i - 1] = f64::INFINITY;
                p.kinds[i - 1] = RowKind::ContactNormal;
                p.kinds[i] = RowKind::Friction { normal_row: i - 1, mu: rng.gen_range(0.0..1.0) };
            }
        }
        solve_pgs_observed(&p, 200, 0.0, |_, l, _| {
            for (i, &x) in l.iter().enumerate() {
                let (lo, hi) = match p.kinds[i] {
                    RowKind::Friction { normal_row, mu } => (-mu * l[normal_row].max(0.0), mu * l[normal_row].max(0.0)),
                    _ => (p.lo[i], p.hi[i]),
                };
                if !(lo <= x && x <= hi) {
                    out_of_bounds += 1;
                }
            }
        })
        .unwrap();
    }

    Line::hard(
        8,
        "solver correctness",
        worst_a <= 1e-6 && lambda_err <= 1e-9 && out_of_bounds == 0,
        format!(
            "(a) bilateral vs direct solve max error {worst_a:.1e} over 200 dense systems and a {rows}-row chain (limit 1e-6); (b) resting sphere |lambda - h m g| {lambda_err:.1e} (limit 1e-9); (c) {out_of_bounds} out-of-bound iterates over 1000 boxed problems"
        ),
    )
}

// 9 ------------------------------------------------------------------------------------------

fn scaling(dir: &Path) -> Line {
    let cores = thread::available_parallelism().map_or(1, |n| n.get());
    let scene = generate(&SceneKind::Bowl { spheres: 2000 }, 1, 5);
    let path = dir.join("scaling.json");
    scene.save(&path).unwrap();
    let mut times = Vec::new();
    for n in [1u32, 2, 4] {
        let t = Instant::now();
        run(&RunConfig {
            scene: path.clone(),
            workers: Some(n),
            repartition: true,
            timestep: Some(0.002),
            steps: 300,
            out_dir: dir.join(format!("scaling{n}")),
            write_trajectory: false,
            ..RunConfig::default()
        })
        .unwrap();
        times.push((n, t.elapsed().as_secs_f64()));
    }
    let speedup = times[0].1 / times[2].1;
    let sweep = times.iter().map(|(n, t)| format!("{n}w {t:.1} s")).collect::<Vec<_>>().join(", ");
    let detail = format!("2000-sphere bowl, 300 steps on {cores} core(s): {sweep}; 4 vs 1 speedup {speedup:.2}x (target 1.5x)");
    if cores < 8 {
        Line {
            id: 9,
            name: "scaling",
            verdict: Verdict::NotEvaluated,
            detail: format!("{detail}; needs at least 8 cores, so the ratio reflects smaller per-worker systems, not parallelism"),
        }
    } else {
        Line::soft(9, "scaling", speedup >= 1.5, detail)
    }
}

// 10 -----------------------------------------------------------------------------------------

fn transport_equivalence(dir: &Path) -> Line {
    let scene = generate(&SceneKind::Bowl { spheres: 100 }, 2, 3);
    let path = dir.join("transport.json");
    scene.save(&path).unwrap();
    let base = RunConfig { scene: path, gamma: 1, steps: 300, ..RunConfig::default() };
    run(&RunConfig { out_dir: dir.join("inproc"), ..base.clone() }).unwrap();

    let servers: Vec<_> = (0..2)
        .map(|_| {
            let s = WorkerServer::bind("127.0.0.1:0").unwrap();
            let addr = s.local_addr().to_string();
            (addr, thread::spawn(move || s.serve()))
        })
        .collect();
    run(&RunConfig {
        transport: TransportKind::Tcp,
        worker_addrs: servers.iter().map(|s| s.0.clone()).collect(),
        out_dir: dir.join("tcp"),
        ..base
    })
    .unwrap();
    for (_, h) in servers {
        h.join().unwrap().unwrap();
    }
    let a = std::fs::read(dir.join("inproc").join(TRAJECTORY_BIN)).unwrap();
    let b = std::fs::read(dir.join("tcp").join(TRAJECTORY_BIN)).unwrap();
    Line::hard(
        10,
        "transport equivalence",
        a == b,
        format!("100-body bowl, 2 workers, 300 steps: trajectory files {} ({} bytes)", if a == b { "identical" } else { "differ" }, a.len()),
    )
}

fn main() -> ExitCode {
    let dir = TempDir::new().unwrap();
    let mut lines = Vec::new();
    let mut report = |line: Line| {
        line.print();
        lines.push(line);
    };
    report(baseline_equivalence());
    report(chain_coupling());
    report(gamma_monotonicity());
    report(weight_oracle());
    let bowl_run = run_bowl();
    report(convexity(&bowl_run));
    report(load_balance_replay(&bowl_run, dir.path()));
    report(load_distribution(&bowl_run));
    report(solver_correctness());
    report(scaling(dir.path()));
    report(transport_equivalence(dir.path()));
    report(residual_steady_state(&bowl_run));

    let failed: Vec<u32> = lines.iter().filter(|l| matches!(l.verdict, Verdict::Fail)).map(|l| l.id).collect();
    if failed.is_empty() {
        println!("acceptance: all hard criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: hard criteria failed: {failed:?}");
        ExitCode::FAILURE
    }
}
