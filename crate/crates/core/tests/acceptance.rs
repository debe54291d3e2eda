//! End-to-end checks of the model against its calibration targets.
//! Prints one `criterion N: PASS|FAIL` line each; exits non-zero on any FAIL.

use std::fs;
use std::process::ExitCode;

use simct::addressing::{AddressMap, PAGE_BYTES};
use simct::experiments::{
    emit_csv, run, run_combinations, run_gups_sweep, run_lowload_stream, run_port_sweep, run_qos_fourport,
    vault_masks, ExperimentKind, ExperimentSpec, Pattern, Point,
};
use simct::hostgen::{PortConfig, Prng};
use simct::interconnect::{peak_bandwidth, LinkConfig};
use simct::protocol::{efficiency, total_flits, Packet, REQUEST_SIZES};
use simct::system::{simulate, SystemConfig};
use simct::SimTime;

type Outcome = (bool, String);

fn spec(kind: ExperimentKind, duration_us: u64, warmup_us: u64) -> ExperimentSpec {
    let mut s = ExperimentSpec::new(kind);
    s.duration = SimTime::from_us(duration_us);
    s.warmup = SimTime::from_us(warmup_us);
    s
}

fn find<'a>(points: &'a [Point], pattern: &str, size: u32) -> &'a Point {
    points.iter().find(|p| p.pattern == pattern && p.size == size).expect("point present")
}

fn peak_bandwidth_exact() -> Outcome {
    let cfg = LinkConfig { links: 2, lanes_per_link: 8, lane_rate_mbps: 15_000 };
    let peak = peak_bandwidth(&cfg).unwrap();
    let dir = cfg.per_direction_gbps();
    (peak == 60.0 && dir == 30.0, format!("peak {peak} GB/s, per direction {dir} GB/s"))
}

fn packet_sizing() -> Outcome {
    let mut ok = true;
    for &b in &REQUEST_SIZES {
        let rd = Packet::read_request(1, 0x40);
        let wr = Packet::write_request(1, 0x40, b).unwrap();
        let flits = b / 16;
        ok &= total_flits(&rd).unwrap() == 1;
        ok &= total_flits(&wr).unwrap() == 1 + flits;
        ok &= total_flits(&Packet::response_to(&rd, b).unwrap()).unwrap() == 1 + flits;
        ok &= total_flits(&Packet::response_to(&wr, b).unwrap()).unwrap() == 1;
    }
    let e16 = efficiency(16).unwrap();
    let e128 = efficiency(128).unwrap();
    ok &= (e16 - 0.5).abs() <= 0.001 && (e128 - 0.889).abs() <= 0.001;
    (ok, format!("flit counts checked for 4 sizes, efficiency 16 B {:.3}, 128 B {:.3}", e16, e128))
}

fn page_footprint() -> Outcome {
    let map = AddressMap::default();
    let mut rng = Prng::new(2024);
    let mut bad = 0;
    for _ in 0..1_000 {
        let page = (rng.next_u64() & map.capacity_mask()) & !(PAGE_BYTES - 1);
        let fp = map.page_footprint(page).unwrap();
        let per_vault_ok = (0..16u8).all(|v| fp.iter().filter(|(fv, _)| *fv == v).count() == 2);
        if fp.len() != 32 || !per_vault_ok {
            bad += 1;
        }
    }
    (bad == 0, format!("{bad} of 1000 pages off the 16 x 2 footprint"))
}

fn no_load_band() -> Outcome {
    let base = SystemConfig::default();
    let t = base.vault.timing;
    let timing_sum = (t.t_rcd + t.t_cl + t.t_rp).as_ns();
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for vault in 0..16u8 {
        for &size in &REQUEST_SIZES {
            let (mask, antimask) = vault_masks(&AddressMap::default(), vault);
            let port = PortConfig { mask, antimask, req_size: size, budget: Some(1), ..Default::default() };
            let r = simulate(SystemConfig { ports: vec![port], ..SystemConfig::default() }).unwrap();
            let device = r.ports[0].monitor.min_latency as f64 / 1_000.0 - 547.0;
            lo = lo.min(device);
            hi = hi.max(device);
        }
    }
    let ok = (timing_sum - 41.0).abs() < 1e-9 && lo >= 100.0 && hi <= 180.0 && lo >= timing_sum;
    (ok, format!("device component {lo:.1}..{hi:.1} ns over 547 ns, DRAM timing sum {timing_sum} ns"))
}

fn lowload_shape() -> Outcome {
    let s = ExperimentSpec::new(ExperimentKind::Lowload);
    let (_, fit) = run_lowload_stream(&s).unwrap();
    let f = fit.expect("fit");
    let ratio = f.plateau.slope.abs() / f.linear.slope;
    let ok = f.linear.r2 >= 0.98 && ratio < 0.05 && f.linear.slope > 0.0;
    (ok, format!("linear n<={} R2 {:.4}, slope {:.2} ns/req, plateau slope ratio {:.4}", f.knee, f.linear.r2, f.linear.slope, ratio))
}

fn vault_cap() -> Outcome {
    let mut s = spec(ExperimentKind::Gups, 150, 50);
    s.patterns = vec![Pattern::Banks(4), Pattern::Banks(8)];
    let r = run_gups_sweep(&s).unwrap();
    let cap = s.vault.internal_gbps();
    let within = |g: f64| (g - cap).abs() <= 0.1 * cap;
    let mut ok = true;
    let mut parts = vec![];
    for (pattern, size) in [("8banks", 16), ("8banks", 32), ("4banks", 64), ("4banks", 128)] {
        let g = find(&r.points, pattern, size).stats.vault_bus_gbps;
        ok &= within(g);
        parts.push(format!("{size}B@{pattern} {g:.2}"));
    }
    (ok, format!("cap {cap} GB/s: {}", parts.join(", ")))
}

fn link_cap() -> Outcome {
    let mut s = spec(ExperimentKind::Gups, 120, 20);
    s.sizes = vec![128];
    s.patterns = vec![Pattern::Vaults(2), Pattern::Vaults(4), Pattern::Vaults(8), Pattern::Vaults(16)];
    let cap = s.net.link.per_direction_gbps();
    let window_ns = (s.duration - s.warmup).as_ns();
    // One response packet of slack for completions straddling the window edge.
    let slack = 144.0 / window_ns;
    let r = run_gups_sweep(&s).unwrap();
    let mut ok = true;
    let mut parts = vec![];
    for p in &r.points {
        let g = p.stats.resp_gbps;
        ok &= g >= 0.7 * cap && g <= cap + slack;
        parts.push(format!("{} {g:.2}", p.pattern));
    }
    (ok, format!("response cap {cap} GB/s: {}", parts.join(", ")))
}

fn pattern_ordering() -> Outcome {
    let s = spec(ExperimentKind::Gups, 150, 50);
    let r = run_gups_sweep(&s).unwrap();
    let mut ok = true;
    let mut worst_vault_ratio = f64::MAX;
    for &size in &s.sizes {
        let mean = |p: &str| find(&r.points, p, size).stats.mean_latency_ns.unwrap();
        let spread_max = s
            .patterns
            .iter()
            .filter(|p| matches!(p, Pattern::Vaults(n) if *n >= 2))
            .map(|p| mean(&p.name()))
            .fold(f64::MIN, f64::max);
        ok &= mean("1bank") > mean("8banks") && mean("8banks") > spread_max;
        worst_vault_ratio = worst_vault_ratio.min(mean("8banks") / spread_max);
    }
    let mut bw_ok = 0;
    for p in &s.patterns {
        // Read traffic: the response direction carries the data.
        let bw = |size| find(&r.points, &p.name(), size).stats.resp_gbps;
        if bw(128) > bw(16) {
            bw_ok += 1;
        }
    }
    ok &= bw_ok == s.patterns.len();
    (
        ok,
        format!(
            "latency order holds per size (min 8banks / worst vault-spread {:.2}), response bw(128)>bw(16) in {bw_ok}/{} patterns",
            worst_vault_ratio,
            s.patterns.len()
        ),
    )
}

fn qos_interference() -> Outcome {
    let s = spec(ExperimentKind::Qos, 100, 20);
    let r = run_qos_fourport(&s).unwrap();
    let mut ok = true;
    let mut parts = vec![];
    for &size in &s.sizes {
        let port3: Vec<&Point> = r.points.iter().filter(|p| p.size == size && p.port == Some(3)).collect();
        let max_at = |p: &&Point| p.stats.max_latency_ns.unwrap();
        let shared = port3.iter().find(|p| p.position == Some(s.qos_vault)).map(max_at).unwrap();
        let best = port3.iter().filter(|p| p.position != Some(s.qos_vault)).map(max_at).fold(f64::MAX, f64::min);
        let gain = shared / best - 1.0;
        ok &= gain >= 0.2;
        parts.push(format!("{size}B +{:.0}%", 100.0 * gain));
    }
    (ok, parts.join(", "))
}

fn spread_monotone() -> Outcome {
    let mut s = spec(ExperimentKind::Combos, 40, 10);
    s.sample = Some(200);
    let (_, spread) = run_combinations(&s).unwrap();
    let sd: Vec<f64> = spread.iter().map(|x| x.stddev_latency_ns).collect();
    let ok = sd.windows(2).all(|w| w[0] < w[1]);
    let text: Vec<String> = spread.iter().map(|x| format!("{}B {:.1}", x.size, x.stddev_latency_ns)).collect();
    (ok, format!("stddev ns over 200 subsets: {}", text.join(", ")))
}

fn little_consistency() -> Outcome {
    let mut g = spec(ExperimentKind::Gups, 100, 20);
    g.sizes = vec![16, 128];
    let gups = run_gups_sweep(&g).unwrap();
    let worst = gups.points.iter().map(|p| p.stats.little_max_error).fold(0.0, f64::max);

    let mut s = spec(ExperimentKind::PortSweep, 100, 20);
    s.sizes = vec![16];
    s.patterns = vec![Pattern::Banks(2), Pattern::Banks(4)];
    let r = run_port_sweep(&s).unwrap();
    let sat = |pat: &str| {
        r.points.iter().filter(|p| p.pattern == pat && p.ports == s.ports).map(|p| p.stats.outstanding).next().unwrap()
    };
    let (two, four) = (sat("2banks"), sat("4banks"));
    let ratio = four / two;
    let ok = worst <= 0.05 && (ratio - 2.0).abs() <= 0.3;
    (
        ok,
        format!("worst |L-lambdaW|/lambdaW {worst:.2e}; outstanding 2 banks {two:.1}, 4 banks {four:.1}, ratio {ratio:.2}"),
    )
}

fn asymmetry() -> Outcome {
    let mut s = spec(ExperimentKind::Gups, 100, 20);
    s.sizes = vec![128];
    s.patterns = vec![Pattern::Vaults(16)];
    let ro = run_gups_sweep(&s).unwrap().points[0].stats.clone();
    s.read_fraction = 0.5;
    let mix = run_gups_sweep(&s).unwrap().points[0].stats.clone();
    let req_share = ro.req_gbps / ro.resp_gbps;
    let gain = (mix.req_gbps + mix.resp_gbps) / (ro.req_gbps + ro.resp_gbps);
    (
        req_share < 0.15 && gain >= 1.3,
        format!("read-only request/response {:.1}%, 50/50 mix aggregate {gain:.2}x", 100.0 * req_share),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut specs = vec![];
    for kind in [ExperimentKind::Gups, ExperimentKind::Qos, ExperimentKind::PortSweep] {
        let mut s = spec(kind, 10, 2);
        s.sizes = vec![32, 128];
        s.seed = 77;
        specs.push(s);
    }
    let mut ll = ExperimentSpec::new(ExperimentKind::Lowload);
    ll.lowload_max = 210;
    specs.push(ll);
    let mut c = spec(ExperimentKind::Combos, 8, 2);
    c.sample = Some(6);
    specs.push(c);

    let mut files = 0;
    let mut same = true;
    for s in &specs {
        let name = s.kind.name();
        let a = emit_csv(&run(s).unwrap(), &dir.path().join(format!("{name}_a.csv"))).unwrap();
        let b = emit_csv(&run(s).unwrap(), &dir.path().join(format!("{name}_b.csv"))).unwrap();
        same &= a.len() == b.len();
        for (x, y) in a.iter().zip(&b) {
            same &= fs::read(x).unwrap() == fs::read(y).unwrap();
            files += 1;
        }
    }
    (same, format!("{files} CSV files compared across {} experiments", specs.len()))
}

fn main() -> ExitCode {
    let criteria: [(u32, fn() -> Outcome); 13] = [
        (1, peak_bandwidth_exact),
        (2, packet_sizing),
        (3, page_footprint),
        (4, no_load_band),
        (5, lowload_shape),
        (6, vault_cap),
        (7, link_cap),
        (8, pattern_ordering),
        (9, qos_interference),
        (10, spread_monotone),
        (11, little_consistency),
        (12, asymmetry),
        (13, determinism),
    ];
    let results: Vec<(u32, Outcome, f64)> = std::thread::scope(|sc| {
        let handles: Vec<_> = criteria
            .iter()
            .map(|&(n, f)| {
                sc.spawn(move || {
                    let t = std::time::Instant::now();
                    let out = std::panic::catch_unwind(f).unwrap_or_else(|_| (false, "panicked".into()));
                    (n, out, t.elapsed().as_secs_f64())
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    let mut failed = 0;
    for (n, (ok, detail), secs) in results {
        println!("criterion {n}: {} {detail} ({secs:.1}s)", if ok { "PASS" } else { "FAIL" });
        failed += usize::from(!ok);
    }
    println!("{} of 13 criteria passed", 13 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
