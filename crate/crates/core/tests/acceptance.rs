//! Acceptance criteria, one line per criterion.
//!
//! Runs with `cargo test --test acceptance`. Exits non-zero if any criterion fails.

use std::collections::{BTreeMap, VecDeque};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use samurai::mask::{
    extract_mask, largest_component, padded_bbox, render_silhouette, BBox, BinaryMask, Connectivity, MaskKey,
};
use samurai::metrics::{evaluate, mrr_from_ranks, recall_from_ranks, EvalOptions, GroundTruth, MRR_CUTOFF};
use samurai::results::Rankings;
use samurai::retrieval::{majority_vote, BaseLists, RankedEntry, RankedList, Strategy, VoteWeights};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<Duration, String> {
    let took = start.elapsed();
    ensure(took < limit, || format!("took {took:?}, limit {limit:?}"))?;
    Ok(took)
}

// ---------------------------------------------------------------------------
// Metrics

fn rank_fixture(ranks: &[Option<usize>]) -> (Rankings, GroundTruth) {
    let mut results = Rankings::new();
    let mut truth = GroundTruth::new();
    for (i, r) in ranks.iter().enumerate() {
        let scene = format!("scene_{i:03}");
        let list: Vec<String> = (1..=10).map(|j| format!("obj_{j:02}")).collect();
        let correct = r.map_or_else(|| "obj_absent".to_string(), |r| list[r - 1].clone());
        results.insert(scene.clone(), list);
        truth.insert(scene, correct);
    }
    (results, truth)
}

fn metric_formula_reproduction() -> Outcome {
    let start = Instant::now();
    let mut ranks = vec![Some(1); 44];
    ranks.extend([Some(2); 4]);
    ranks.extend([Some(4); 2]);
    let (results, truth) = rank_fixture(&ranks);
    let report = evaluate(&results, &truth, EvalOptions::default()).map_err(|e| e.to_string())?;
    ensure(report.num_queries == 50, || {
        format!("num_queries {}", report.num_queries)
    })?;
    ensure(report.recall_at_1 == 0.88, || format!("R@1 {}", report.recall_at_1))?;
    ensure(report.recall_at_5 == 1.0, || format!("R@5 {}", report.recall_at_5))?;
    ensure(report.recall_at_10 == 1.0, || format!("R@10 {}", report.recall_at_10))?;
    ensure(report.mrr == 0.93, || format!("MRR {}", report.mrr))?;
    let json = report.to_json();
    for needle in [
        "\"recall_at_1\": 0.8800",
        "\"recall_at_5\": 1.0000",
        "\"recall_at_10\": 1.0000",
        "\"mrr\": 0.9300",
    ] {
        ensure(json.contains(needle), || format!("report lacks {needle}"))?;
    }
    let took = within(start, Duration::from_secs(1))?;
    Ok(format!("R@1=0.8800 R@5=1.0000 R@10=1.0000 MRR=0.9300 in {took:?}"))
}

fn mrr_hand_case_and_monotonicity() -> Outcome {
    let (results, truth) = rank_fixture(&[Some(1), Some(2), Some(4), None]);
    let report = evaluate(&results, &truth, EvalOptions::default()).map_err(|e| e.to_string())?;
    ensure(report.mrr == 0.4375, || format!("MRR {}", report.mrr))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xacce97);
    for case in 0..1000 {
        let n = rng.random_range(1..=60);
        let ranks: Vec<Option<usize>> = (0..n)
            .map(|_| rng.random_bool(0.8).then(|| rng.random_range(1..=15)))
            .collect();
        let r = [1, 5, 10].map(|k| recall_from_ranks(&ranks, k).unwrap());
        ensure(r[0] <= r[1] && r[1] <= r[2], || format!("case {case}: recall {r:?}"))?;
        let m = mrr_from_ranks(&ranks, MRR_CUTOFF).unwrap();
        ensure(r[2] / 10.0 <= m && m <= r[2], || {
            format!("case {case}: MRR {m} vs R@10 {}", r[2])
        })?;
    }
    Ok("MRR=0.4375; monotone recall on 1000/1000 multisets".into())
}

// ---------------------------------------------------------------------------
// Voting

fn list(strategy: Strategy, ids: &[String]) -> RankedList {
    RankedList {
        scene_id: "scene".into(),
        strategy,
        entries: ids
            .iter()
            .enumerate()
            .map(|(i, id)| RankedEntry {
                object_id: id.clone(),
                score: -(i as f64),
            })
            .collect(),
    }
}

/// Materializes (votes, borda, text, id) per object by linear scans and picks
/// the best remaining tuple K times.
fn vote_oracle(
    catalog: &[String],
    lists: &[(u32, Vec<String>); 4],
    text: &BTreeMap<String, f32>,
    k: usize,
) -> Vec<(String, f64)> {
    let mut rows: Vec<(u64, u64, f32, String)> = Vec::new();
    for id in catalog {
        let mut votes = 0u64;
        let mut borda = 0u64;
        let mut listed = false;
        for (w, l) in lists {
            for (pos, other) in l.iter().enumerate() {
                if other == id {
                    listed = true;
                    votes += u64::from(*w);
                    borda += u64::from(*w) * (l.len() + 1 - (pos + 1)) as u64;
                }
            }
        }
        if listed {
            rows.push((votes, borda, text[id], id.clone()));
        }
    }
    let better = |a: &(u64, u64, f32, String), b: &(u64, u64, f32, String)| -> bool {
        if a.0 != b.0 {
            return a.0 > b.0;
        }
        if a.1 != b.1 {
            return a.1 > b.1;
        }
        if a.2 != b.2 {
            return a.2 > b.2;
        }
        a.3 < b.3
    };
    let mut out = Vec::new();
    while out.len() < k && !rows.is_empty() {
        let mut best = 0;
        for i in 1..rows.len() {
            if better(&rows[i], &rows[best]) {
                best = i;
            }
        }
        let (v, b, _, id) = rows.swap_remove(best);
        out.push((id, v as f64 + b as f64 / 1e6));
    }
    out
}

fn voting_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_f00d);
    let mut agree = 0;
    for case in 0..1000 {
        let n = rng.random_range(1..=8usize);
        let k = rng.random_range(1..=n.min(4));
        let catalog: Vec<String> = (0..n).map(|i| format!("o{i}")).collect();
        // Coarse text scores so ties occur.
        let text: BTreeMap<String, f32> = catalog
            .iter()
            .map(|id| (id.clone(), rng.random_range(-2..=2) as f32 / 2.0))
            .collect();
        let weights = VoteWeights {
            text: rng.random_range(0..=3),
            shape: rng.random_range(0..=3),
            hybrid_shape: rng.random_range(0..=3),
            hybrid_text: rng.random_range(0..=3),
        };
        let mut draw = || {
            let mut ids = catalog.clone();
            ids.shuffle(&mut rng);
            ids.truncate(k);
            ids
        };
        let raw = [draw(), draw(), draw(), draw()];
        let base = BaseLists {
            text: list(Strategy::TextOnly, &raw[0]),
            shape: list(Strategy::ShapeOnly, &raw[1]),
            hybrid_shape: list(Strategy::TextThenShapeShapeOrder, &raw[2]),
            hybrid_text: list(Strategy::TextThenShapeTextOrder, &raw[3]),
        };
        let got: Vec<(String, f64)> = majority_vote(&base, &weights, k, &text)
            .map_err(|e| format!("case {case}: {e}"))?
            .entries
            .into_iter()
            .map(|e| (e.object_id, e.score))
            .collect();
        let oracle_lists = [
            (weights.text, raw[0].clone()),
            (weights.shape, raw[1].clone()),
            (weights.hybrid_shape, raw[2].clone()),
            (weights.hybrid_text, raw[3].clone()),
        ];
        let want = vote_oracle(&catalog, &oracle_lists, &text, k);
        ensure(got == want, || format!("case {case}: got {got:?}, oracle {want:?}"))?;
        agree += 1;
    }
    let took = within(start, Duration::from_secs(5))?;
    Ok(format!("{agree}/1000 identical in {took:?}"))
}

// ---------------------------------------------------------------------------
// Masks

fn flood_fill_largest(mask: &BinaryMask, conn: Connectivity) -> Vec<usize> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut seen = vec![false; mask.len()];
    let mut best: Vec<usize> = Vec::new();
    let steps: Vec<(i64, i64)> = match conn {
        Connectivity::Four => vec![(1, 0), (-1, 0), (0, 1), (0, -1)],
        Connectivity::Eight => (-1..=1)
            .flat_map(|dy| (-1..=1).map(move |dx| (dx, dy)))
            .filter(|&(dx, dy)| dx != 0 || dy != 0)
            .collect(),
    };
    for start in 0..mask.len() {
        if !mask.bits()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = Vec::new();
        let mut queue = VecDeque::from([start]);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = (i as i64 % w, i as i64 / w);
            for (dx, dy) in &steps {
                let (nx, ny) = (x + dx, y + dy);
                if (0..w).contains(&nx) && (0..h).contains(&ny) {
                    let j = (ny * w + nx) as usize;
                    if mask.bits()[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        comp.sort_unstable();
        // Components are discovered in order of their smallest pixel, so a
        // strict comparison keeps the earliest on ties.
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

fn random_mask(rng: &mut ChaCha8Rng, max: u32) -> BinaryMask {
    let (w, h) = (rng.random_range(1..=max), rng.random_range(1..=max));
    let p = rng.random_range(0.05..0.75);
    let bits = (0..w * h).map(|_| rng.random_bool(p)).collect();
    BinaryMask::from_bits(w, h, bits).unwrap()
}

fn ccl_oracle_equivalence() -> Outcome {
    let m = BinaryMask::from_rows(&["110", "010", "001"]).unwrap();
    let c8 = samurai::mask::connected_components(&m, Connectivity::Eight);
    let c4 = samurai::mask::connected_components(&m, Connectivity::Four);
    let sizes = |c: &[samurai::mask::Component]| c.iter().map(|c| c.size).collect::<Vec<_>>();
    ensure(sizes(&c8) == [4], || format!("8-conn sizes {:?}", sizes(&c8)))?;
    ensure(sizes(&c4) == [3, 1], || format!("4-conn sizes {:?}", sizes(&c4)))?;

    let mut rng = ChaCha8Rng::seed_from_u64(0xcc1);
    let mut checked = 0;
    for case in 0..500 {
        let mask = random_mask(&mut rng, 64);
        for conn in [Connectivity::Four, Connectivity::Eight] {
            let oracle = flood_fill_largest(&mask, conn);
            match largest_component(&mask, conn) {
                Ok(out) => {
                    let got: Vec<usize> = out.true_indices().collect();
                    ensure(got == oracle, || {
                        format!("case {case} ({conn}-conn) differs from flood fill")
                    })?;
                }
                Err(_) => ensure(oracle.is_empty(), || format!("case {case}: unexpected EmptyMask"))?,
            }
            checked += 1;
        }
    }
    Ok(format!(
        "3x3 fixture 4-conn [3,1] / 8-conn [4]; {checked}/1000 mask-connectivity pairs match"
    ))
}

fn preprocessing_fixtures() -> Outcome {
    let mut m = BinaryMask::new(100, 100);
    for y in 20..30 {
        for x in 20..30 {
            m.set(x, y, true);
        }
    }
    let b = padded_bbox(&m, 10).map_err(|e| e.to_string())?;
    ensure(
        b == BBox {
            x0: 10,
            y0: 10,
            x1: 40,
            y1: 40,
        },
        || format!("bbox {b}"),
    )?;

    let corner = |x, y| {
        let mut m = BinaryMask::new(100, 100);
        m.set(x, y, true);
        padded_bbox(&m, 10).unwrap()
    };
    let origin = corner(0, 0);
    ensure(
        origin
            == BBox {
                x0: 0,
                y0: 0,
                x1: 11,
                y1: 11,
            },
        || format!("origin bbox {origin}"),
    )?;
    let far = corner(99, 99);
    ensure(
        far == BBox {
            x0: 89,
            y0: 89,
            x1: 100,
            y1: 100,
        },
        || format!("far-corner bbox {far}"),
    )?;
    let full = padded_bbox(&BinaryMask::from_bits(100, 100, vec![true; 10_000]).unwrap(), 10).unwrap();
    ensure(
        full == BBox {
            x0: 0,
            y0: 0,
            x1: 100,
            y1: 100,
        },
        || format!("full-frame bbox {full}"),
    )?;

    let white = MaskKey::new([255, 255, 255], 0);
    let mut rng = ChaCha8Rng::seed_from_u64(0x511);
    for case in 0..200 {
        let mask = random_mask(&mut rng, 64);
        let back = extract_mask(&render_silhouette(&mask), &white);
        ensure(back == mask, || format!("round-trip {case} differs"))?;
    }
    Ok("bbox (10,10)-(40,40); clamps at both corners and full frame; 200/200 silhouette round-trips".into())
}

// ---------------------------------------------------------------------------
// End-to-end through the binary

fn samurai(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_samurai"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "samurai {} failed ({}): {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 temp path")
}

struct Metrics {
    r1: f64,
    mrr: f64,
}

fn retrieve_and_evaluate(dir: &Path, strategy: &str, workers: &str) -> Result<(Metrics, Vec<u8>), String> {
    let csv = dir.join(format!("results_{strategy}_{workers}.csv"));
    let report = dir.join(format!("report_{strategy}_{workers}.json"));
    samurai(&[
        "retrieve",
        "--embeddings",
        p(&dir.join("embeddings.jsonl")),
        "--manifest",
        p(dir),
        "--strategy",
        strategy,
        "--workers",
        workers,
        "--out",
        p(&csv),
    ])?;
    samurai(&[
        "evaluate",
        "--results",
        p(&csv),
        "--truth",
        p(&dir.join("truth.csv")),
        "--out",
        p(&report),
    ])?;
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let metrics = Metrics {
        r1: json["recall_at_1"].as_f64().ok_or("no recall_at_1")?,
        mrr: json["mrr"].as_f64().ok_or("no mrr")?,
    };
    Ok((metrics, std::fs::read(&csv).map_err(|e| e.to_string())?))
}

const STRATEGIES: [&str; 5] = ["text", "shape", "ts-shape", "ts-text", "vote"];

fn synth(dir: &Path, adversarial: bool) -> Result<(), String> {
    let mut args = vec![
        "synth",
        "--scenes",
        "50",
        "--objects",
        "200",
        "--dim",
        "64",
        "--seed",
        "7",
        "--out",
        p(dir),
    ];
    if adversarial {
        args.extend(["--adversarial", "text-decoys"]);
    }
    samurai(&args).map(|_| ())
}

fn planted_pipeline() -> Outcome {
    let start = Instant::now();
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    synth(tmp.path(), false)?;
    for strategy in STRATEGIES {
        let (m, _) = retrieve_and_evaluate(tmp.path(), strategy, "1")?;
        ensure(m.r1 == 1.0 && m.mrr == 1.0, || {
            format!("{strategy}: R@1 {} MRR {}", m.r1, m.mrr)
        })?;
    }
    let took = within(start, Duration::from_secs(10))?;
    Ok(format!("all 5 strategies R@1=1.0000 MRR=1.0000 in {took:?}"))
}

fn adversarial_separation() -> Outcome {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    synth(tmp.path(), true)?;
    let (text, _) = retrieve_and_evaluate(tmp.path(), "text", "1")?;
    let (hybrid, _) = retrieve_and_evaluate(tmp.path(), "ts-shape", "1")?;
    let (vote, _) = retrieve_and_evaluate(tmp.path(), "vote", "1")?;
    ensure(text.r1 < 1.0, || format!("text R@1 {}", text.r1))?;
    ensure(hybrid.r1 == 1.0, || format!("ts-shape R@1 {}", hybrid.r1))?;
    ensure(vote.mrr >= text.mrr, || {
        format!("vote MRR {} < text MRR {}", vote.mrr, text.mrr)
    })?;
    Ok(format!(
        "text R@1={:.4}, ts-shape R@1={:.4}, vote MRR={:.4} >= text MRR={:.4}",
        text.r1, hybrid.r1, vote.mrr, text.mrr
    ))
}

fn worker_determinism() -> Outcome {
    let tmp = TempDir::new().map_err(|e| e.to_string())?;
    synth(tmp.path(), false)?;
    for strategy in STRATEGIES {
        let (_, one) = retrieve_and_evaluate(tmp.path(), strategy, "1")?;
        let (_, eight) = retrieve_and_evaluate(tmp.path(), strategy, "8")?;
        ensure(one == eight, || {
            format!("{strategy}: CSVs differ between 1 and 8 workers")
        })?;
    }
    Ok("results CSVs byte-identical for 1 and 8 workers (all 5 strategies)".into())
}

type Criterion = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        (
            "metric formula reproduction (50-scene witness)",
            metric_formula_reproduction,
        ),
        ("MRR hand case and recall monotonicity", mrr_hand_case_and_monotonicity),
        ("voting oracle equivalence", voting_oracle_equivalence),
        ("CCL oracle equivalence", ccl_oracle_equivalence),
        ("preprocessing fixtures", preprocessing_fixtures),
        ("end-to-end planted pipeline", planted_pipeline),
        ("adversarial separation", adversarial_separation),
        ("worker-count determinism", worker_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("[PASS] {name}: {detail}"),
            Err(why) => {
                failed += 1;
                println!("[FAIL] {name}: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
