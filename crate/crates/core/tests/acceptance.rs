//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass a substring to run a subset, e.g.
//! `cargo test --test acceptance -- replay`.

mod common;

use std::collections::BTreeSet;
use std::net::TcpListener;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::thread;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config as ProptestConfig, TestRunner};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use common::arb::{arb_event, arb_message, arb_task, arb_task_list};
use common::{connect, processes_matching, session_start, task, wait_for, wait_message, EngineProcess};
use finj::controller::{host_log_path, host_output_dir, inject, SessionPlan, SessionSummary};
use finj::engine::{self, reasons, start_task_message, EngineHandle, TERMINATED};
use finj::faultlib::BusyloopReport;
use finj::netproto::{decode_stream, encode_message, ClientEvent, FrameDecoder};
use finj::storage::{
    format_log_line, format_workload_line, load_workload, parse_log_line, parse_workload_line,
    read_log, task_output_stem, write_workload, LogWriter,
};
use finj::wlgen::{generate_workload, probe_workload, CommandSpec, DistributionSpec, GenerationSpec};
use finj::{
    format_core_list, parse_core_list, CoreSet, EventType, HarnessConfig, Message, MessageKind,
    PeerId, SessionEvent, Task,
};

const BUSYLOOP: &str = env!("CARGO_BIN_EXE_busyloop");
const CPUOCCUPY: &str = env!("CARGO_BIN_EXE_cpuoccupy");
const MEMLEAK: &str = env!("CARGO_BIN_EXE_memleak");

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn start_engine(pool_size: usize, exact: bool, port: u16) -> Result<EngineHandle, String> {
    let config = HarnessConfig {
        listen_port: port,
        pool_size,
        exact_durations: exact,
        retry_interval_seconds: 1,
        ..HarnessConfig::default()
    };
    engine::start(&config).map_err(|e| format!("engine on port {port}: {e}"))
}

fn controller_config(results: &Path) -> HarnessConfig {
    HarnessConfig {
        results_dir: results.to_path_buf(),
        read_ahead_seconds: 2,
        retry_interval_seconds: 1,
        startup_timeout_seconds: 5,
        drain_timeout_seconds: 5,
        ..HarnessConfig::default()
    }
}

fn local(port: u16) -> PeerId {
    PeerId::new("127.0.0.1", port)
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn with_cores(mut t: Task, cores: &str, is_fault: bool) -> Task {
    t.cores = parse_core_list(cores).unwrap();
    t.is_fault = is_fault;
    t
}

/// Writes `tasks` and runs one session against `peers`.
fn run_session(
    dir: &Path,
    tasks: &[Task],
    peers: Vec<PeerId>,
    config: &HarnessConfig,
) -> Result<SessionSummary, String> {
    let workload = dir.join("workload.csv");
    write_workload(&workload, tasks).map_err(|e| e.to_string())?;
    inject(&SessionPlan::new(&workload, peers), config).map_err(|e| e.to_string())
}

fn host_events(results: &Path, peer: &PeerId) -> Result<Vec<SessionEvent>, String> {
    read_log(&host_log_path(results, peer)).map_err(|e| e.to_string())
}

fn sequence(events: &[SessionEvent]) -> Vec<(EventType, Option<u64>)> {
    events.iter().map(|e| (e.kind, e.seq_num())).collect()
}

fn find(events: &[SessionEvent], kind: EventType, seq: u64) -> Result<&SessionEvent, String> {
    events
        .iter()
        .find(|e| e.kind == kind && e.seq_num() == Some(seq))
        .ok_or_else(|| format!("no {} for seq {seq}", kind.as_str()))
}

fn last(events: &[SessionEvent], kind: EventType, seq: u64) -> Result<&SessionEvent, String> {
    events
        .iter()
        .rev()
        .find(|e| e.kind == kind && e.seq_num() == Some(seq))
        .ok_or_else(|| format!("no {} for seq {seq}", kind.as_str()))
}

fn secs_between(a: &SessionEvent, b: &SessionEvent) -> i64 {
    b.timestamp as i64 - a.timestamp as i64
}

fn kill_matching(marker: &str) {
    for pid in processes_matching(marker) {
        // SAFETY: plain kill(2) on a pid we just found.
        unsafe { libc::kill(pid as i32, libc::SIGKILL) };
    }
}

fn replay_scaled_trace() -> Check {
    use EventType::*;
    let engine = start_engine(16, false, 0)?;
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    let tasks = vec![
        with_cores(task(1, 0, 17, &format!("{BUSYLOOP} 17")), "0-7", false),
        with_cores(task(2, 4, 3, &format!("{CPUOCCUPY} 3")), "6", true),
        with_cores(task(3, 10, 3, &format!("{MEMLEAK} 3")), "4", true),
    ];
    let peer = local(engine.port());
    let began = Instant::now();
    let summary = run_session(dir.path(), &tasks, vec![peer.clone()], &controller_config(&results));
    let runtime = began.elapsed();
    engine.shutdown();
    summary?;
    let events = host_events(&results, &peer)?;
    let expected = vec![
        (SessionStart, None),
        (Start, Some(1)),
        (Start, Some(2)),
        (End, Some(2)),
        (Start, Some(3)),
        (End, Some(3)),
        (End, Some(1)),
        (SessionEnd, None),
    ];
    ensure(sequence(&events) == expected, || format!("sequence {:?}", sequence(&events)))?;
    let mut lags = Vec::new();
    for t in &tasks {
        let start = find(&events, Start, t.seq_num)?;
        let end = find(&events, End, t.seq_num)?;
        let lag = secs_between(start, end) - t.duration as i64;
        ensure(lag.abs() <= 2, || format!("seq {} ended {lag:+} s off its duration", t.seq_num))?;
        lags.push(lag);
    }
    ensure(runtime < Duration::from_secs(30), || format!("runtime {runtime:?}"))?;
    Ok(format!("end offsets {lags:?} s, runtime {:.1} s", runtime.as_secs_f64()))
}

fn duration_semantics() -> Check {
    use EventType::*;
    let dir = tempfile::tempdir().unwrap();

    let engine = start_engine(4, false, 0)?;
    let results = dir.path().join("max");
    let peer = local(engine.port());
    let tasks = vec![
        task(1, 0, 0, "sh -c 'sleep 2 && echo natural'"),
        task(2, 0, 5, "sleep 60"),
    ];
    let summary = run_session(dir.path(), &tasks, vec![peer.clone()], &controller_config(&results));
    engine.shutdown();
    summary?;
    let events = host_events(&results, &peer)?;
    let (s1, e1) = (find(&events, Start, 1)?, find(&events, End, 1)?);
    ensure(e1.error.as_deref() != Some(TERMINATED), || "duration-0 task was killed".into())?;
    let natural = secs_between(s1, e1);
    ensure((1..=4).contains(&natural), || format!("duration-0 task ran {natural} s"))?;
    let (s2, e2) = (find(&events, Start, 2)?, find(&events, End, 2)?);
    ensure(e2.error.as_deref() == Some(TERMINATED), || format!("sleeper end {:?}", e2.error))?;
    let killed = secs_between(s2, e2);
    ensure((3..=7).contains(&killed), || format!("sleeper killed after {killed} s"))?;

    let engine = start_engine(4, true, 0)?;
    let results = dir.path().join("exact");
    let peer = local(engine.port());
    let summary = run_session(
        dir.path(),
        &[task(1, 0, 5, "sleep 1")],
        vec![peer.clone()],
        &controller_config(&results),
    );
    engine.shutdown();
    summary?;
    let events = host_events(&results, &peer)?;
    let restarts = events.iter().filter(|e| e.kind == Restart).count();
    ensure(restarts >= 3, || format!("{restarts} restarts"))?;
    let exact = secs_between(find(&events, Start, 1)?, find(&events, End, 1)?);
    ensure((3..=7).contains(&exact), || format!("exact task spanned {exact} s"))?;
    Ok(format!(
        "natural exit after {natural} s, kill after {killed} s, {restarts} restarts over {exact} s"
    ))
}

fn crash_recovery() -> Check {
    use EventType::*;
    let port = free_port();
    let port_arg = port.to_string();
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    let marker = format!("sleep 30.{}", std::process::id());
    let workload = dir.path().join("workload.csv");
    write_workload(&workload, &[task(1, 0, 20, &marker)]).map_err(|e| e.to_string())?;

    let mut engine = Some(EngineProcess::spawn(&["-p", &port_arg], &[]));
    let peer = local(port);
    let mut config = controller_config(&results);
    config.drain_timeout_seconds = 10;
    let plan = SessionPlan::new(&workload, vec![peer.clone()]);
    let began = Instant::now();
    let controller = thread::spawn(move || inject(&plan, &config));

    thread::sleep(Duration::from_secs(5).saturating_sub(began.elapsed()));
    if let Some(mut e) = engine.take() {
        let _ = e.child.kill();
        let _ = e.child.wait();
    }
    // A crashed node loses its processes too.
    kill_matching(&marker);
    thread::sleep(Duration::from_secs(10).saturating_sub(began.elapsed()));
    let restarted = EngineProcess::spawn(&["-p", &port_arg], &[]);
    let summary = controller.join().map_err(|_| "controller panicked".to_string())?;
    let _ = restarted.stop();
    kill_matching(&marker);
    summary.map_err(|e| e.to_string())?;

    let events = host_events(&results, &peer)?;
    let kinds: Vec<EventType> = events.iter().map(|e| e.kind).collect();
    let starts = events.iter().filter(|e| e.kind == Start && e.seq_num() == Some(1)).count();
    ensure(kinds.contains(&ConnLost), || format!("no conn_lost in {kinds:?}"))?;
    ensure(kinds.contains(&ConnRestored), || format!("no conn_restored in {kinds:?}"))?;
    ensure(starts >= 2, || format!("task started {starts} time(s): {kinds:?}"))?;
    let end = last(&events, End, 1)?;
    let lost = events.iter().position(|e| e.kind == ConnLost).unwrap();
    let restored = events.iter().position(|e| e.kind == ConnRestored).unwrap();
    ensure(lost < restored, || "conn_restored before conn_lost".into())?;
    ensure(kinds.last() == Some(&SessionEnd), || format!("log ends with {:?}", kinds.last()))?;
    ensure(end.error.as_deref() != Some(reasons::WINDOW_ELAPSED), || {
        "task was not resumed".into()
    })?;
    let span = secs_between(&events[0], end);
    Ok(format!("{} events, task re-dispatched, final end {span} s after session start", events.len()))
}

fn multi_node() -> Check {
    let a = start_engine(4, false, 30000)?;
    let b = match start_engine(4, false, 30001) {
        Ok(b) => b,
        Err(e) => {
            a.shutdown();
            return Err(e);
        }
    };
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    let tasks = vec![
        task(1, 0, 2, "echo one"),
        task(2, 1, 2, "sleep 0.5"),
        task(3, 2, 3, "sh -c 'exit 4'"),
        task(4, 3, 2, "sleep 10"),
    ];
    let peers = vec![PeerId::new("localhost", 30000), PeerId::new("localhost", 30001)];
    let summary = run_session(dir.path(), &tasks, peers.clone(), &controller_config(&results));
    a.shutdown();
    b.shutdown();
    let summary = summary?;
    let first = host_events(&results, &peers[0])?;
    let second = host_events(&results, &peers[1])?;
    ensure(first.len() == second.len(), || format!("{} vs {} events", first.len(), second.len()))?;
    let mut worst = 0;
    for (x, y) in first.iter().zip(&second) {
        if x.kind != y.kind || x.seq_num() != y.seq_num() {
            return Err(format!("{:?}\nvs\n{:?}", sequence(&first), sequence(&second)));
        }
        worst = worst.max(x.timestamp.abs_diff(y.timestamp));
    }
    ensure(worst <= 2, || format!("timestamps differ by {worst} s"))?;
    ensure(summary.clean(), || summary.line())?;
    Ok(format!("{} identical events per host, max skew {worst} s", first.len()))
}

fn master_arbitration() -> Check {
    let engine = start_engine(4, false, 0)?;
    let port = engine.port();
    let dir = tempfile::tempdir().unwrap();
    let results = dir.path().join("results");
    let workload = dir.path().join("workload.csv");
    write_workload(&workload, &[task(1, 0, 6, "sleep 4")]).map_err(|e| e.to_string())?;
    let plan = SessionPlan::new(&workload, vec![local(port)]);
    let config = controller_config(&results);
    let master = thread::spawn(move || inject(&plan, &config));

    thread::sleep(Duration::from_millis(1500));
    let intruded = dir.path().join("intruded");
    let intruder = connect(port);
    let rogue = task(77, 0, 2, &format!("touch {}", intruded.display()));
    intruder.send(start_task_message("intruder:1", &rogue)).map_err(|e| e.to_string())?;
    let reply = wait_for(&intruder, Duration::from_secs(5), |e| {
        matches!(e, ClientEvent::Message(m) if m.kind == MessageKind::StatusError)
    });
    let summary = master.join().map_err(|_| "controller panicked".to_string())?;
    engine.shutdown();
    let summary = summary.map_err(|e| e.to_string())?;
    let Some(ClientEvent::Message(reply)) = reply else {
        return Err("no status_error for the second controller".into());
    };
    let reason = reply.payload.error.unwrap_or_default();
    ensure(reason.contains(reasons::NOT_MASTER), || format!("error `{reason}`"))?;
    ensure(!intruded.exists(), || "the rejected task ran".into())?;
    let events = host_events(&results, &local(port))?;
    ensure(events.iter().all(|e| e.seq_num() != Some(77) || e.kind == EventType::Error), || {
        "the rejected task shows up in the master's log".into()
    })?;
    ensure(summary.clean(), || summary.line())?;
    Ok(format!("second controller got `{reason}`, nothing ran"))
}

const OVERHEAD_RUNS: usize = 20;
const OVERHEAD_SECONDS: u64 = 30;

fn busyloop_direct(extra: &[String]) -> Result<BusyloopReport, String> {
    let out = Command::new(BUSYLOOP)
        .arg(OVERHEAD_SECONDS.to_string())
        .args(extra)
        .output()
        .map_err(|e| e.to_string())?;
    let text = String::from_utf8_lossy(&out.stdout);
    BusyloopReport::parse(&text).ok_or_else(|| format!("unexpected busyloop output `{text}`"))
}

fn busyloop_injected(
    engine: &EngineHandle,
    dir: &Path,
    run: usize,
    iterations: u64,
) -> Result<Duration, String> {
    let results = dir.join(format!("run{run}"));
    let peer = local(engine.port());
    let args = format!("{BUSYLOOP} {OVERHEAD_SECONDS} --iterations {iterations}");
    let t = task(1, 0, 0, &args);
    let summary = run_session(dir, &[t.clone()], vec![peer.clone()], &controller_config(&results))?;
    ensure(summary.clean(), || summary.line())?;
    let out = host_output_dir(&results, &peer).join(format!("{}_1.out", task_output_stem(&args)));
    let text = std::fs::read_to_string(&out).map_err(|e| format!("{}: {e}", out.display()))?;
    BusyloopReport::parse(&text)
        .map(|r| r.elapsed)
        .ok_or_else(|| format!("unexpected busyloop output `{text}`"))
}

fn overhead() -> Check {
    let engine = start_engine(4, false, 0)?;
    let dir = tempfile::tempdir().unwrap();
    let mut direct = Vec::new();
    let mut injected = Vec::new();
    // One calibrated run fixes the amount of work for every measured run,
    // so calibration noise does not enter the comparison. Runs are
    // interleaved so that drift in machine speed hits both sides alike.
    let outcome = busyloop_direct(&[]).and_then(|calibrated| {
        let fixed = ["--iterations".to_string(), calibrated.iterations.to_string()];
        (0..OVERHEAD_RUNS).try_for_each(|run| {
            direct.push(busyloop_direct(&fixed)?.elapsed.as_secs_f64());
            let via = busyloop_injected(&engine, dir.path(), run, calibrated.iterations)?;
            injected.push(via.as_secs_f64());
            Ok::<(), String>(())
        })
    });
    engine.shutdown();
    outcome?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (d, i) = (mean(&direct), mean(&injected));
    let diff = (i - d) / d;
    ensure(diff.abs() <= 0.02, || format!("direct {d:.3} s, injected {i:.3} s, diff {:+.2}%", diff * 100.0))?;
    Ok(format!(
        "direct {d:.3} s, injected {i:.3} s over {OVERHEAD_RUNS} runs each, diff {:+.2}%",
        diff * 100.0
    ))
}

/// Two-sample Kolmogorov-Smirnov statistic; ties are stepped together.
fn ks_two_sample(a: &[u64], b: &[u64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_unstable();
    b.sort_unstable();
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] == x {
            i += 1;
        }
        while j < b.len() && b[j] == x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

/// Gaps between floored cumulative arrival times, the same discretisation
/// the generator applies.
fn floored_gaps(interarrivals: impl Iterator<Item = f64>) -> Vec<u64> {
    let mut t = 0.0;
    let mut prev = 0u64;
    interarrivals
        .map(|x| {
            t += x;
            let now = t.floor() as u64;
            let gap = now - prev;
            prev = now;
            gap
        })
        .collect()
}

fn generator_statistics() -> Check {
    const SPAN: u64 = 86_400;
    const MEAN: f64 = 60.0;
    const SEEDS: u64 = 20;
    // Critical value of the two-sample test at alpha = 0.01.
    const C_ALPHA: f64 = 1.628;
    let expected = SPAN as f64 / MEAN;
    let sigma = expected.sqrt();
    let mut passed = 0;
    let mut worst = String::new();
    for seed in 0..SEEDS {
        let spec = GenerationSpec {
            span: SPAN,
            fault_duration: None,
            fault_interarrival: None,
            bench_duration: Some(DistributionSpec::Constant { value: 10.0 }),
            bench_interarrival: Some(DistributionSpec::Exponential { rate: 1.0 / MEAN }),
            commands: vec![CommandSpec::new("./bench {duration}", false)],
            seed,
            probe_duration: 5,
        };
        let (tasks, _) = generate_workload(&spec).map_err(|e| e.to_string())?;
        let times: Vec<u64> = tasks.iter().map(|t| t.timestamp).collect();
        let gaps: Vec<u64> = times.windows(2).map(|w| w[1] - w[0]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + seed);
        let exp = Exp::new(1.0 / MEAN).unwrap();
        let reference = floored_gaps((0..5000).map(|_| exp.sample(&mut rng)));
        let d = ks_two_sample(&gaps, &reference);
        let (n, m) = (gaps.len() as f64, reference.len() as f64);
        let critical = C_ALPHA * ((n + m) / (n * m)).sqrt();
        let count_ok = (tasks.len() as f64 - expected).abs() <= 3.0 * sigma;
        if count_ok && d <= critical {
            passed += 1;
        } else {
            worst = format!("seed {seed}: {} tasks, D={d:.4} > {critical:.4}?", tasks.len());
        }
    }
    ensure(passed >= 19, || format!("{passed}/{SEEDS} seeds pass; {worst}"))?;

    let spec = GenerationSpec {
        span: 3600,
        fault_duration: Some(DistributionSpec::Uniform { low: 10.0, high: 40.0 }),
        fault_interarrival: Some(DistributionSpec::Exponential { rate: 0.01 }),
        bench_duration: Some(DistributionSpec::Constant { value: 100.0 }),
        bench_interarrival: Some(DistributionSpec::Exponential { rate: 0.005 }),
        commands: vec![
            CommandSpec::new("./bench-a {duration}", false),
            CommandSpec::new("./bench-b", false),
            CommandSpec::new("./leak 16", true),
        ],
        seed: 3,
        probe_duration: 7,
    };
    let probe = probe_workload(&spec);
    let distinct: BTreeSet<String> = probe.iter().map(|t| t.args.clone()).collect();
    ensure(probe.len() == 3 && distinct.len() == 3, || format!("probe {probe:?}"))?;
    ensure(probe.iter().all(|t| t.duration == 7), || format!("probe durations {probe:?}"))?;
    Ok(format!("{passed}/{SEEDS} seeds pass count and KS checks; probe has one entry per command"))
}

fn round_trip<S: Strategy>(
    name: &str,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    let config = ProptestConfig {
        failure_persistence: None,
        ..ProptestConfig::with_cases(1000)
    };
    let mut runner = TestRunner::new(config);
    runner.run(&strategy, test).map_err(|e| format!("{name}: {e}"))
}

fn feed(frames: &[u8], cuts: &[usize]) -> Result<Vec<Message>, String> {
    let mut decoder = FrameDecoder::new();
    let mut out = Vec::new();
    let mut from = 0;
    for &cut in cuts.iter().chain(std::iter::once(&frames.len())) {
        out.extend(decoder.push(&frames[from..cut]).map_err(|e| e.to_string())?);
        from = cut;
    }
    Ok(out)
}

fn format_round_trips() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("file.csv");

    round_trip("workload file", arb_task_list(40), |tasks| {
        write_workload(&path, &tasks).unwrap();
        prop_assert_eq!(load_workload(&path).unwrap(), tasks);
        Ok(())
    })?;
    round_trip("workload line", arb_task(), |t| {
        prop_assert_eq!(parse_workload_line(&format_workload_line(&t)).unwrap(), t);
        Ok(())
    })?;
    round_trip("log file", proptest::collection::vec(arb_event(), 0..30), |events| {
        let mut w = LogWriter::create(&path).unwrap();
        for e in &events {
            w.append(e).unwrap();
        }
        drop(w);
        prop_assert_eq!(read_log(&path).unwrap(), events);
        Ok(())
    })?;
    round_trip("log line", arb_event(), |e| {
        prop_assert_eq!(parse_log_line(&format_log_line(&e)).unwrap(), e);
        Ok(())
    })?;
    round_trip("core list", proptest::collection::btree_set(0usize..512, 0..48), |cores| {
        let set = (!cores.is_empty()).then(|| CoreSet::new(cores));
        prop_assert_eq!(parse_core_list(&format_core_list(set.as_ref())).unwrap(), set);
        Ok(())
    })?;
    round_trip("wire frame", arb_message(), |m| {
        let frame = encode_message(&m).unwrap();
        let (decoded, rest) = decode_stream(&frame).unwrap();
        prop_assert!(rest.is_empty());
        prop_assert_eq!(decoded, vec![m]);
        Ok(())
    })?;
    let three = proptest::collection::vec(arb_message(), 3);
    let split = (three, proptest::collection::vec(any::<prop::sample::Index>(), 0..8));
    round_trip("random partitions", split, |(messages, picks)| {
        let frames: Vec<u8> = messages.iter().flat_map(|m| encode_message(m).unwrap()).collect();
        let mut cuts: Vec<usize> = picks.iter().map(|p| p.index(frames.len() + 1)).collect();
        cuts.sort_unstable();
        prop_assert_eq!(feed(&frames, &cuts).unwrap(), messages);
        Ok(())
    })?;

    // Every placement of one and two cuts, plus byte-at-a-time delivery, for
    // a fixed three-message sequence.
    let mut runner = TestRunner::deterministic();
    let messages: Vec<Message> = (0..3)
        .map(|_| arb_message().new_tree(&mut runner).unwrap().current())
        .collect();
    let frames: Vec<u8> = messages.iter().flat_map(|m| encode_message(m).unwrap()).collect();
    let n = frames.len();
    let mut partitions = 0;
    for i in 0..=n {
        for j in i..=n {
            ensure(feed(&frames, &[i, j])? == messages, || format!("cuts at {i},{j}"))?;
            partitions += 1;
        }
    }
    let bytewise: Vec<usize> = (1..n).collect();
    ensure(feed(&frames, &bytewise)? == messages, || "byte-at-a-time delivery".into())?;
    Ok(format!(
        "1000 cases per format; {partitions} cut placements over a {n}-byte stream"
    ))
}

/// Process group of `pid`, from /proc.
fn process_group(pid: u32) -> Option<u32> {
    let stat = std::fs::read_to_string(format!("/proc/{pid}/stat")).ok()?;
    stat.rsplit(')').next()?.split_whitespace().nth(2)?.parse().ok()
}

fn pool_bound() -> Check {
    let engine = start_engine(2, false, 0)?;
    let client = connect(engine.port());
    client.send(session_start("ctl:1")).map_err(|e| e.to_string())?;
    wait_message(&client, Duration::from_secs(5), MessageKind::Ack)
        .ok_or("no ack for session start")?;
    let marker = format!("sleep 3.{}", std::process::id());
    for seq in 1..=4 {
        client
            .send(start_task_message("ctl:1", &task(seq, 0, 10, &marker)))
            .map_err(|e| e.to_string())?;
    }
    let began = Instant::now();
    let mut peak = 0;
    let mut samples = 0;
    let mut ended = BTreeSet::new();
    let mut failures = Vec::new();
    while ended.len() < 4 && began.elapsed() < Duration::from_secs(40) {
        let groups: BTreeSet<u32> =
            processes_matching(&marker).into_iter().filter_map(process_group).collect();
        peak = peak.max(groups.len());
        samples += 1;
        if let Ok(ClientEvent::Message(m)) = client.events().recv_timeout(Duration::from_millis(20)) {
            match m.kind {
                MessageKind::StatusTaskEnd => {
                    if m.payload.error.is_some() {
                        failures.push(format!("{:?}", m.payload.error));
                    }
                    ended.extend(m.payload.seq_num);
                }
                MessageKind::StatusError => failures.push(format!("{:?}", m.payload.error)),
                _ => {}
            }
        }
    }
    engine.shutdown();
    ensure(peak <= 2, || format!("{peak} concurrent tasks observed"))?;
    ensure(ended.len() == 4, || format!("only {ended:?} completed"))?;
    ensure(failures.is_empty(), || format!("failures {failures:?}"))?;
    Ok(format!("peak {peak} running over {samples} samples; all 4 completed"))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("trace replay (scaled)", replay_scaled_trace),
        ("duration semantics", duration_semantics),
        ("crash recovery", crash_recovery),
        ("multi-node", multi_node),
        ("master arbitration", master_arbitration),
        ("overhead", overhead),
        ("generator statistics", generator_statistics),
        ("format round-trips", format_round_trips),
        ("pool bound", pool_bound),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let selected = |name: &str| filters.is_empty() || filters.iter().any(|f| name.contains(f.as_str()));
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !selected(name) {
            continue;
        }
        ran += 1;
        let began = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(format!("panicked: {}", panic_text(&p))));
        let took = began.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {} {name}: {detail} [{took:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {} {name}: {detail} [{took:.1} s]", i + 1);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_text(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}
