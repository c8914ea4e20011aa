use std::path::{Path, PathBuf};
use std::process::Command;

use mimic_core::analysis::{GridSpec, Histogram, OccupancyGrid};
use mimic_core::cli::run;
use mimic_core::replay::{write_replay_file, ActionVector, FrameRecord, Replay};
use mimic_core::sampler::SequenceSample;
use mimic_core::store::MatchStore;

struct Output {
    code: i32,
    stdout: String,
    stderr: String,
}

fn mimic(args: &[&str]) -> Output {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("mimic").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    Output {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_replay(dir: &Path, player: &str, match_id: &str, kills: u16, turn: f32) -> PathBuf {
    let mut r = Replay::new(player, match_id);
    for i in 0..40u32 {
        let wobble = if i % 3 == 0 { -turn } else { turn };
        r.frames.push(FrameRecord {
            tick: i,
            action: ActionVector::with_buttons(wobble * (i % 5) as f32, 0.5, (i % 32) as u8),
            pos_x: 100.0 + 10.0 * i as f32,
            pos_y: -50.0 + 3.0 * (i % 7) as f32,
            yaw: 0.0,
            kills: (u32::from(kills) * i / 39) as u16,
            deaths: (i / 20) as u16,
            damage: i * 25,
        });
    }
    let path = dir.join(format!("{player}_{match_id}.farp"));
    write_replay_file(&path, &r).unwrap();
    path
}

#[test]
fn sample_without_skipping() {
    let dir = tempfile::tempdir().unwrap();
    let replay = write_replay(dir.path(), "ash", "m1", 3, 1.0);
    let o = mimic(&[
        "sample",
        path_str(&replay),
        "-t",
        "30",
        "-N",
        "15",
        "--lambda",
        "1.0",
        "-L",
        "2",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let s: SequenceSample = serde_json::from_str(o.stdout.trim()).unwrap();
    assert_eq!(s.frame_indices, (16..=30).collect::<Vec<_>>());
    assert_eq!(s.anchor, 30);
}

#[test]
fn sample_default_skipping() {
    let dir = tempfile::tempdir().unwrap();
    let replay = write_replay(dir.path(), "ash", "m1", 3, 1.0);
    let o = mimic(&["sample", path_str(&replay), "-t", "30"]);
    let s: SequenceSample = serde_json::from_str(o.stdout.trim()).unwrap();
    assert_eq!(
        s.frame_indices,
        [5, 8, 10, 12, 14, 16, 18, 20, 22, 23, 25, 27, 28, 29, 30]
    );
    assert_eq!(s.channel_spec.channels, 5);
}

#[test]
fn sample_reads_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let replay = write_replay(dir.path(), "ash", "m1", 3, 1.0);
    let cfg = dir.path().join("pipeline.toml");
    std::fs::write(
        &cfg,
        "[sampler]\nsequence_length = 4\nskip_exponent = 1.0\n",
    )
    .unwrap();
    let o = mimic(&[
        "sample",
        path_str(&replay),
        "-t",
        "10",
        "--config",
        path_str(&cfg),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let s: SequenceSample = serde_json::from_str(o.stdout.trim()).unwrap();
    assert_eq!(s.frame_indices, [7, 8, 9, 10]);
}

#[test]
fn compare_with_itself_is_zero() {
    let dir = tempfile::tempdir().unwrap();
    let replay = write_replay(dir.path(), "ash", "m1", 3, 1.0);
    let o = mimic(&["compare", path_str(&replay), path_str(&replay)]);
    assert_eq!(o.code, 0);
    assert_eq!(o.stdout.trim().parse::<f64>().unwrap(), 0.0);
    let other = write_replay(dir.path(), "bo", "m1", 3, 4.0);
    let o = mimic(&[
        "compare",
        path_str(&replay),
        path_str(&other),
        "--order",
        "2",
    ]);
    assert!(o.stdout.trim().parse::<f64>().unwrap() > 0.0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(mimic(&["sample", "--bogus"]).code, 2);
    assert_eq!(mimic(&["nonsense"]).code, 2);
    assert_eq!(mimic(&[]).code, 2);
    let help = mimic(&["sample", "--help"]);
    assert_eq!(help.code, 0);
    assert!(help.stdout.contains("--lambda"));
}

#[test]
fn runtime_errors_exit_one() {
    let o = mimic(&["analyze", "/definitely/not/here.farp"]);
    assert_eq!(o.code, 1);
    assert!(o.stderr.starts_with("error:"), "{}", o.stderr);

    let dir = tempfile::tempdir().unwrap();
    let replay = write_replay(dir.path(), "ash", "m1", 3, 1.0);
    let o = mimic(&["sample", path_str(&replay), "-t", "39"]);
    assert_eq!(o.code, 1);
    let o = mimic(&["sample", path_str(&replay), "-t", "5", "--lambda", "2.0"]);
    assert_eq!(o.code, 1);
}

#[test]
fn train_demo_is_deterministic() {
    let a = mimic(&["train-demo", "--steps", "60", "--json"]);
    let b = mimic(&["train-demo", "--steps", "60", "--json"]);
    assert_eq!(a.code, 0, "{}", a.stderr);
    assert_eq!(a.stdout, b.stdout);
    let v: serde_json::Value = serde_json::from_str(a.stdout.trim()).unwrap();
    assert_eq!(v["step_losses"].as_array().unwrap().len(), 60);

    let text = mimic(&["train-demo", "--steps", "60", "--mse-plain"]);
    assert!(text.stdout.starts_with("step,loss\n1,"));
    assert!(text.stdout.contains("mouse_loss=plain"));
}

#[test]
fn analyze_outputs_parse_back() {
    let dir = tempfile::tempdir().unwrap();
    let replay = write_replay(dir.path(), "ash", "m1", 3, 1.0);
    let heat = dir.path().join("heat.csv");
    let hist = dir.path().join("hist.csv");
    let svg = dir.path().join("heat.svg");
    let outline = dir.path().join("walls.txt");
    std::fs::write(&outline, "# walls\n0,0\n600,0\n600,100\n").unwrap();
    let o = mimic(&[
        "analyze",
        path_str(&replay),
        "--heatmap",
        path_str(&heat),
        "--hist",
        path_str(&hist),
        "--svg",
        path_str(&svg),
        "--outline",
        path_str(&outline),
        "--cell-size",
        "32",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let h = Histogram::from_csv(&std::fs::read_to_string(&hist).unwrap()).unwrap();
    assert_eq!(h.total(), 40);
    assert_eq!(h.counts.len(), 61);
    let csv = std::fs::read_to_string(&heat).unwrap();
    let rows = csv.lines().count();
    let cols = csv.lines().next().unwrap().split(',').count();
    let spec = GridSpec {
        origin: (0.0, 0.0),
        cell_size: 32.0,
        width: cols,
        height: rows,
    };
    let counts = OccupancyGrid::from_csv(&csv, spec).unwrap();
    assert_eq!(counts.iter().sum::<u64>(), 40);
    let svg = std::fs::read_to_string(&svg).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));
}

#[test]
fn ingest_stats_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store");
    let a = write_replay(dir.path(), "ash", "m1", 9, 1.0);
    let b = write_replay(dir.path(), "bo", "m1", 4, 6.0);
    let c = write_replay(dir.path(), "ash", "m2", 2, 1.0);
    let d = write_replay(dir.path(), "bo", "m2", 2, 6.0);
    let o = mimic(&[
        "ingest",
        path_str(&a),
        path_str(&b),
        path_str(&c),
        path_str(&d),
        "--store",
        path_str(&store),
        "--played-at",
        "2021-06-01T12:00:00Z",
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);

    let s = MatchStore::open(&store).unwrap();
    assert_eq!(s.match_count(), 2);
    // m1 has a clear leader; m2 is a tie and gets no winner.
    assert!(s.result("m1", "ash").unwrap().won);
    assert!(!s.result("m2", "ash").unwrap().won && !s.result("m2", "bo").unwrap().won);

    let o = mimic(&["stats", "--store", path_str(&store), "--rank", "win_rate"]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let lines: Vec<&str> = o.stdout.lines().collect();
    assert!(lines[0].starts_with("player_id,"));
    assert!(lines[1].starts_with("ash,"));
    assert_eq!(lines.len(), 3);

    let out = dir.path().join("report");
    let o = mimic(&[
        "report",
        "--store",
        path_str(&store),
        "--out",
        path_str(&out),
    ]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    for f in [
        "players.csv",
        "matches.csv",
        "heatmap_ash.svg",
        "camera_bo.csv",
        "camera_w1.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let w1 = std::fs::read_to_string(out.join("camera_w1.csv")).unwrap();
    let row: Vec<&str> = w1.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], ["ash", "bo"]);
    assert!(row[2].parse::<f64>().unwrap() > 0.0);
    Histogram::from_csv(&std::fs::read_to_string(out.join("camera_ash.csv")).unwrap()).unwrap();

    // The same replay twice is a duplicate result.
    let o = mimic(&["ingest", path_str(&a), "--store", path_str(&store)]);
    assert_eq!(o.code, 1);
}

#[test]
fn eval_ranks_agents() {
    let dir = tempfile::tempdir().unwrap();
    let game = |k: u32, dmg: u64, d: u32| {
        format!("{{\"kills\":{k},\"damage\":{dmg},\"deaths\":{d},\"duration_s\":600.0}}\n")
    };
    let weak = dir.path().join("weak.jsonl");
    let strong = dir.path().join("strong.jsonl");
    std::fs::write(&weak, game(5, 700, 9) + &game(6, 800, 8)).unwrap();
    std::fs::write(&strong, game(11, 1400, 11) + &game(11, 1500, 11)).unwrap();
    let o = mimic(&["eval", path_str(&weak), path_str(&strong)]);
    assert_eq!(o.code, 0, "{}", o.stderr);
    let lines: Vec<&str> = o.stdout.lines().collect();
    assert!(lines[1].starts_with("strong,11.000,1450.000"));
    assert!(lines[2].starts_with("weak,5.500,750.000"));
}

#[test]
fn binary_uses_store_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_replay(dir.path(), "ash", "m1", 9, 1.0);
    let ingest = Command::new(env!("CARGO_BIN_EXE_mimic"))
        .args(["ingest", path_str(&a)])
        .env("MIMIC_STORE", dir.path().join("store"))
        .output()
        .unwrap();
    assert!(ingest.status.success());
    let out = Command::new(env!("CARGO_BIN_EXE_mimic"))
        .args(["stats"])
        .env("MIMIC_STORE", dir.path().join("store"))
        .output()
        .unwrap();
    assert!(String::from_utf8(out.stdout).unwrap().contains("ash,"));
    let bad = Command::new(env!("CARGO_BIN_EXE_mimic"))
        .args(["stats", "--no-such-flag"])
        .output()
        .unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
