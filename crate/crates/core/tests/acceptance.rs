//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use chiplet_lab_core::analyzer::{analyze, box_stats, HopKind};
use chiplet_lab_core::arch::{parse_arch, ArchConfig, NodeId};
use chiplet_lab_core::experiment::{self, resolve_arch, run_pair, ExperimentSpec, Outcome, WorkloadSource};
use chiplet_lab_core::mapper::MappingPolicy;
use chiplet_lab_core::netsim::{multicast_tree, xy_route, SimOptions};
use chiplet_lab_core::trace;
use common::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const ARCHS: [&str; 3] = ["1x2", "3x3", "6x3"];

type Verdict = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn routing_oracle() -> Verdict {
    let t0 = Instant::now();
    let mut pairs = 0;
    for a in ARCHS {
        let cfg = parse_arch(a).unwrap();
        for src in all_nodes(&cfg) {
            let dist = bfs(&cfg, src);
            for dst in all_nodes(&cfg) {
                if dst == src {
                    continue;
                }
                let hops = xy_route(src, dst, &cfg).map_err(|e| e.to_string())?.hops();
                ensure(hops == dist[&dst], || format!("{a}: {src}->{dst} routed {hops}, BFS {}", dist[&dst]))?;
                pairs += 1;
            }
        }
    }
    let el = t0.elapsed();
    ensure(el < Duration::from_secs(1), || format!("took {el:?}"))?;
    Ok(format!("{pairs} node pairs match BFS in {el:?}"))
}

fn check_tree(cfg: &ArchConfig, src: NodeId, dsts: &[NodeId]) -> Result<(), String> {
    let tree = multicast_tree(src, dsts, cfg).map_err(|e| e.to_string())?;
    let links = tree.hops() as usize;
    let oracle = union_links(cfg, src, dsts).len();
    let dist = bfs(cfg, src);
    let far = dsts.iter().map(|d| dist[d] as usize).max().unwrap();
    let sum: usize = dsts.iter().map(|d| dist[d] as usize).sum();
    ensure(links == oracle, || format!("{src}->{dsts:?}: {links} links, oracle {oracle}"))?;
    ensure(far <= links && links <= sum, || format!("{src}->{dsts:?}: {links} outside [{far}, {sum}]"))
}

fn subsets(items: &[NodeId], max: usize, f: &mut impl FnMut(&[NodeId]) -> Result<(), String>) -> Result<usize, String> {
    fn go(
        items: &[NodeId],
        from: usize,
        cur: &mut Vec<NodeId>,
        max: usize,
        n: &mut usize,
        f: &mut impl FnMut(&[NodeId]) -> Result<(), String>,
    ) -> Result<(), String> {
        if !cur.is_empty() {
            f(cur)?;
            *n += 1;
        }
        if cur.len() == max {
            return Ok(());
        }
        for i in from..items.len() {
            cur.push(items[i]);
            go(items, i + 1, cur, max, n, f)?;
            cur.pop();
        }
        Ok(())
    }
    let mut n = 0;
    go(items, 0, &mut Vec::new(), max, &mut n, f)?;
    Ok(n)
}

fn multicast_oracle() -> Verdict {
    let t0 = Instant::now();
    let cfg = parse_arch("3x3").unwrap();
    let nodes = all_nodes(&cfg);
    let mut exhaustive = 0;
    for &src in &nodes {
        let others: Vec<NodeId> = nodes.iter().copied().filter(|&n| n != src).collect();
        exhaustive += subsets(&others, 4, &mut |d| check_tree(&cfg, src, d))?;
    }
    let cfg = parse_arch("6x3").unwrap();
    let nodes = all_nodes(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d63);
    for _ in 0..1000 {
        let src = *nodes.choose(&mut rng).unwrap();
        let others: Vec<NodeId> = nodes.iter().copied().filter(|&n| n != src).collect();
        let k = rng.gen_range(1..=others.len());
        let d: Vec<NodeId> = others.choose_multiple(&mut rng, k).copied().collect();
        check_tree(&cfg, src, &d)?;
    }
    let el = t0.elapsed();
    ensure(el < Duration::from_secs(10), || format!("took {el:?}"))?;
    Ok(format!("{exhaustive} exhaustive 3x3 sets + 1000 random 6x3 sets in {el:?}"))
}

fn conservation() -> Verdict {
    let mut runs = 0;
    let mut records = 0;
    for path in bundled_files() {
        let graph = chiplet_lab_core::workload::load_workload(&path).map_err(|e| e.to_string())?;
        for a in ARCHS {
            let arch = resolve_arch(a, false).map_err(|e| e.to_string())?;
            let r = run_pair(&graph, &arch, MappingPolicy::AllChiplets, SimOptions::default())
                .map_err(|e| format!("{} on {a}: {e}", graph.name))?;
            let tag = format!("{} on {a}", graph.name);
            let ledger: u64 = r.trace.link_busy.values().sum();
            ensure(ledger == r.trace.busy.nop, || format!("{tag}: link ledger {ledger} != NoP {}", r.trace.busy.nop))?;
            ensure(r.report.nop_cycles == r.trace.busy.nop, || format!("{tag}: report NoP differs from simulator"))?;
            let rep = &r.report;
            if rep.total_comm_cycles > 0 {
                let s = rep.frac_noc + rep.frac_nop + rep.frac_dram;
                ensure((s - 1.0).abs() <= 1e-9, || format!("{tag}: fractions sum to {s}"))?;
            }
            let n = r.trace.records.len() as u64;
            let hop_total: u64 = rep.hop_hist.values().flat_map(|h| h.values()).sum();
            let mc_total: u64 = rep.mcast_hist.values().sum();
            let mc_records = r.trace.records.iter().filter(|t| t.message.dsts.len() >= 2).count() as u64;
            ensure(hop_total == n, || format!("{tag}: hop histogram {hop_total} != {n} records"))?;
            ensure(rep.n_unicast + rep.n_multicast == n, || format!("{tag}: message counts != {n}"))?;
            ensure(mc_total == rep.n_multicast && mc_total == mc_records, || {
                format!("{tag}: multicast histogram {mc_total}, counted {mc_records}")
            })?;
            let rows = trace::parse_csv(&trace::to_csv(&trace::rows(&r.trace))).map_err(|e| e.to_string())?;
            let again = analyze(&graph.name, &arch.label, &rows, &arch.cfg);
            ensure(&again == rep, || format!("{tag}: re-analysis of dumped trace differs"))?;
            runs += 1;
            records += n;
        }
    }
    Ok(format!("{runs} runs, {records} records reconcile"))
}

fn closed_form() -> Verdict {
    let cfg = parse_arch("6x3").unwrap();
    let nodes = all_nodes(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(0xc10f);
    let mut sets = 0;
    while sets < 300 {
        let k = rng.gen_range(1..=5);
        let mut used = std::collections::BTreeSet::new();
        let mut msgs = Vec::new();
        for _ in 0..50 {
            if msgs.len() == k {
                break;
            }
            let src = *nodes.choose(&mut rng).unwrap();
            let dst = *nodes.choose(&mut rng).unwrap();
            if src == dst {
                continue;
            }
            let links = xy_links(&cfg, src, dst);
            if links.iter().any(|l| used.contains(l)) {
                continue;
            }
            used.extend(links.iter().copied());
            msgs.push((src, vec![dst], rng.gen_range(1..100_000u64), links.len() as u64));
        }
        let raw: Vec<_> = msgs.iter().map(|(s, d, b, _)| (*s, d.clone(), *b)).collect();
        let t = simulate_raw(&cfg, &raw, SimOptions::default());
        for (rec, (s, d, b, hops)) in t.records.iter().zip(&msgs) {
            let want = cfg.hop_latency * hops + ser(*b, cfg.nop_bw);
            let got = rec.end - rec.start;
            ensure(rec.start == 0 && got == want, || {
                format!("{s}->{}: {b} B latency {got} (start {}), expected {want}", d[0], rec.start)
            })?;
        }
        sets += 1;
    }

    // two messages contending for one link: the second waits for the
    // first's serialization window, then pays its own
    let c = NodeId::compute;
    let h = cfg.hop_latency;
    for (a, b, b1, b2) in [
        ((c(1, 0), c(2, 0)), (c(1, 0), c(2, 0)), 1000u64, 333u64),
        ((c(1, 0), c(3, 0)), (c(2, 0), c(3, 0)), 4096, 4097),
    ] {
        let t = simulate_raw(&cfg, &[(a.0, vec![a.1], b1), (b.0, vec![b.1], b2)], SimOptions::default());
        let s1 = ser(b1, cfg.nop_bw);
        let s2 = ser(b2, cfg.nop_bw);
        let hops1 = xy_links(&cfg, a.0, a.1).len() as u64;
        let hops2 = xy_links(&cfg, b.0, b.1).len() as u64;
        let (e1, st2, e2) = (h * hops1 + s1, s1, s1 + h * hops2 + s2);
        let got = (t.records[0].end, t.records[1].start, t.records[1].end);
        ensure(got == (e1, st2, e2), || format!("contention: got {got:?}, oracle {:?}", (e1, st2, e2)))?;
    }
    Ok(format!("{sets} contention-free sets and 2 contention cases exact"))
}

fn sweep_spec(out: &Path, jobs: usize) -> ExperimentSpec {
    let workloads = bundled_files().into_iter().map(WorkloadSource::File).collect();
    let mut s = ExperimentSpec::new(workloads, ARCHS.iter().map(|a| a.to_string()).collect(), out);
    s.jobs = jobs;
    s
}

fn nop_trend(outcome: &Outcome, elapsed: Duration) -> Verdict {
    ensure(outcome.success(), || format!("{} pair(s) failed", outcome.failures.len()))?;
    ensure(outcome.reports.len() == 36, || format!("{} reports, expected 36", outcome.reports.len()))?;
    let mut by: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &outcome.reports {
        by.entry(r.config.as_str()).or_default().push(r.frac_nop);
    }
    let med: Vec<f64> = ARCHS.iter().map(|a| box_stats(&by[a]).unwrap().median).collect();
    let shown = format!("medians 1x2 {:.4} < 3x3 {:.4} < 6x3 {:.4}, sweep {:.1?}", med[0], med[1], med[2], elapsed);
    ensure(med[0] < med[1] && med[1] < med[2], || shown.clone())?;
    ensure(elapsed < Duration::from_secs(120), || shown.clone())?;
    Ok(shown)
}

fn hop_trend(outcome: &Outcome) -> Verdict {
    let mut checked = Vec::new();
    for r in outcome.reports.iter().filter(|r| r.config == "6x3" && r.n_multicast >= 10) {
        let u = r.mean_hops(HopKind::Unicast).unwrap_or(0.0);
        let m = r.mean_hops(HopKind::Multicast).unwrap_or(0.0);
        ensure(m > u, || format!("{}: multicast {m:.2} <= unicast {u:.2}", r.workload))?;
        checked.push(format!("{} {:.1}/{:.1}", r.workload, m, u));
    }
    ensure(!checked.is_empty(), || "no workload has 10 multicasts on 6x3".into())?;
    Ok(format!("{} workloads, multicast/unicast mean hops: {}", checked.len(), checked.join(", ")))
}

fn determinism(first: &Path, second: &Path) -> Verdict {
    let a = snapshot(first);
    let b = snapshot(second);
    ensure(a.len() == b.len(), || format!("{} files vs {}", a.len(), b.len()))?;
    for ((pa, da), (pb, db)) in a.iter().zip(&b) {
        ensure(pa == pb, || format!("file sets differ at {} / {}", pa.display(), pb.display()))?;
        ensure(da == db, || format!("{} differs between runs", pa.display()))?;
    }
    let traces = a.iter().filter(|(p, _)| p.ends_with("trace.csv")).count();
    Ok(format!("{} files ({traces} traces) byte-identical across parallel and serial runs", a.len()))
}

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let (first, second) = (tmp.path().join("a"), tmp.path().join("b"));

    let t0 = Instant::now();
    let sweep = experiment::run(&sweep_spec(&first, 0));
    let elapsed = t0.elapsed();
    let rerun = experiment::run(&sweep_spec(&second, 1));

    let mut results: Vec<(&str, Verdict)> = vec![
        ("routing oracle", routing_oracle()),
        ("multicast oracle", multicast_oracle()),
        ("conservation", conservation()),
        ("closed-form latency", closed_form()),
    ];
    match &sweep {
        Ok(o) => {
            results.push(("NoP fraction grows with system size", nop_trend(o, elapsed)));
            results.push(("multicasts travel further than unicasts", hop_trend(o)));
        }
        Err(e) => {
            results.push(("NoP fraction grows with system size", Err(e.to_string())));
            results.push(("multicasts travel further than unicasts", Err(e.to_string())));
        }
    }
    let det = match (&sweep, &rerun) {
        (Ok(_), Ok(_)) => determinism(&first, &second),
        (Err(e), _) | (_, Err(e)) => Err(e.to_string()),
    };
    results.push(("determinism", det));

    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        match v {
            Ok(detail) => println!("PASS [{}] {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL [{}] {name}: {why}", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
