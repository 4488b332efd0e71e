use std::fs;
use std::path::Path;

use pcgeval::harness::{
    read_metrics, summarize_training, train_all, train_one, Manifest, MetricsRecord, TrainingPlan, MANIFEST_FILE,
};
use pcgeval::interact::DuelEnv;
use pcgeval::pcg::PcgVersion;
use pcgeval::ppo::Learner;

fn small_plan(out: &Path, total: u64) -> TrainingPlan {
    TrainingPlan {
        seeds: vec![1, 2],
        versions: PcgVersion::ALL.to_vec(),
        total_sgas: total,
        checkpoint_every: 1500,
        metrics_every: 250,
        out_dir: out.to_path_buf(),
        ..TrainingPlan::default()
    }
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn runs_are_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let plan = TrainingPlan { seeds: vec![7], ..small_plan(dir.path(), 3000) };
        let out = train_one(7, PcgVersion::V3Normalized, &plan).unwrap();
        assert_eq!(out.checkpoints.len(), 2);
        assert_eq!(read_metrics(&out.metrics_path).unwrap().len(), 12);
    }
    assert_eq!(tree_bytes(a.path()), tree_bytes(b.path()));
}

#[test]
fn resume_matches_straight_run() {
    let (straight, split) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let plan = small_plan(straight.path(), 3000);
    train_one(2, PcgVersion::V2Raw, &plan).unwrap();

    let first = small_plan(split.path(), 1500);
    train_one(2, PcgVersion::V2Raw, &first).unwrap();
    let second = TrainingPlan { resume: true, ..small_plan(split.path(), 3000) };
    train_one(2, PcgVersion::V2Raw, &second).unwrap();
    assert_eq!(tree_bytes(straight.path()), tree_bytes(split.path()));

    // an interrupted run leaves rows past its last checkpoint; resuming drops them
    let run = second.run_dir(2, PcgVersion::V2Raw);
    fs::remove_file(run.join("checkpoints/ckpt_000003000.bin")).unwrap();
    train_one(2, PcgVersion::V2Raw, &second).unwrap();
    assert_eq!(tree_bytes(straight.path()), tree_bytes(split.path()));
}

#[test]
fn logged_counters_match_independent_replay() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_plan(dir.path(), 3000);
    let out = train_one(1, PcgVersion::V1Random, &plan).unwrap();
    let rows = read_metrics(&out.metrics_path).unwrap();

    let mut learner = Learner::new(1, plan.arch.clone(), plan.ppo).unwrap();
    let mut env = DuelEnv::new(PcgVersion::V1Random, plan.ga, plan.duel, plan.reward, 1).unwrap();
    let mut total = 0.0;
    let mut games = 0;
    let mut next = rows.iter();
    for sga in 1..=3000u64 {
        let s = learner.step(&mut env).unwrap();
        total += s.reward;
        games += s.terminated as u64;
        if sga % 250 == 0 {
            let row = next.next().unwrap();
            assert_eq!(row.sga, sga);
            assert_eq!(row.cum_reward, total);
            assert_eq!(row.games_total, games);
        }
    }
    let windows: u64 = rows.iter().map(|r| r.games_window).sum();
    assert_eq!(windows, rows.last().unwrap().games_total);
    for r in &rows {
        assert!(r.attr_freq.iter().all(|f| (0.0..=1.0).contains(f)));
        if let Some(w) = r.win_rate_window {
            assert!((0.0..=1.0).contains(&w));
        }
    }
    for w in rows.windows(2) {
        assert!(w[1].games_total >= w[0].games_total && w[1].wins_total >= w[0].wins_total);
    }
}

#[test]
fn serial_and_parallel_agree_and_manifest_round_trips() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ma = train_all(&small_plan(a.path(), 1500), false).unwrap();
    let mb = train_all(&small_plan(b.path(), 1500), true).unwrap();
    assert_eq!(ma.runs.len(), 6);
    assert_eq!(ma.runs, mb.runs);
    assert!(ma.failures().next().is_none());
    let loaded = Manifest::load(&a.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(loaded, ma);
    for run in &ma.runs {
        let m = run.metrics.as_ref().unwrap();
        assert_eq!(pcgeval::harness::sha256_file(&a.path().join(&m.path)).unwrap(), m.sha256);
    }
}

#[test]
fn failed_run_is_recorded() {
    let dir = tempfile::tempdir().unwrap();
    let plan = small_plan(dir.path(), 1500);
    // a file where a run directory should go
    fs::write(plan.run_dir(1, PcgVersion::V1Random), b"x").unwrap();
    let m = train_all(&plan, false).unwrap();
    let failed: Vec<_> = m.failures().map(|r| r.run_id.clone()).collect();
    assert_eq!(failed, vec!["v1_seed1".to_string()]);
    assert_eq!(m.runs.iter().filter(|r| r.error.is_none()).count(), 5);
}

fn row(sga: u64, wr: Option<f64>, games: u64, wins: u64, reward: f64) -> MetricsRecord {
    MetricsRecord {
        sga,
        games_window: games,
        wins_window: wins,
        win_rate_window: wr,
        cum_reward: reward,
        games_total: games,
        wins_total: wins,
        attr_freq: [3.0 / 7.0; 7],
    }
}

#[test]
fn summaries() {
    let losing = vec![row(500, Some(0.0), 10, 0, -400.0), row(1000, Some(0.0), 20, 0, -800.0)];
    let s = summarize_training(&[(PcgVersion::V1Random, losing)]).unwrap();
    assert_eq!(s[0].avg_win_rate.as_ref().unwrap().mean, 0.0);
    assert_eq!(s[0].avg_reward_per_game.as_ref().unwrap().mean, -40.0);

    let run = vec![row(500, Some(0.2), 5, 1, 10.0), row(1000, None, 5, 1, 12.0)];
    let three: Vec<_> = (0..3).map(|_| (PcgVersion::V2Raw, run.clone())).collect();
    let s = summarize_training(&three).unwrap();
    assert_eq!(s[0].total_games, 15);
    assert_eq!(s[0].win_rate_curve[0].median, Some(0.2));
    assert_eq!(s[0].win_rate_curve[1].median, None);
    assert!(s[0].avg_win_rate.as_ref().unwrap().std < 1e-15);

    let other = vec![row(400, Some(0.2), 5, 1, 10.0), row(1000, None, 5, 1, 12.0)];
    assert!(summarize_training(&[(PcgVersion::V2Raw, run), (PcgVersion::V2Raw, other)]).is_err());
}
