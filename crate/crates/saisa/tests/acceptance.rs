//! One line per acceptance criterion; exits non-zero if any fails.

use std::process::Command;
use std::time::Instant;

use saisa_core::config::PresetRegistry;
use saisa_core::cost::{flops_llava, flops_ratio, flops_saisa, CostQuery};
use saisa_core::verify::{run_suite, Suite};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn within(what: &str, got: f64, want: f64, tol: f64) -> Result<String, String> {
    let rel = (got - want).abs() / want;
    let line = format!("{what} {got:.4} vs {want} ({:.2}%)", rel * 100.0);
    if rel <= tol {
        Ok(line)
    } else {
        Err(line)
    }
}

fn query(llm: &str, enc: &str) -> CostQuery {
    let r = PresetRegistry::builtin();
    let e = r.encoder(enc).unwrap();
    CostQuery::new(r.llm(llm).unwrap(), e, e.v, 64)
}

fn tflops_llava(llm: &str, enc: &str) -> f64 {
    flops_llava(&query(llm, enc)).tflops()
}

fn tflops_saisa(llm: &str, enc: &str) -> f64 {
    flops_saisa(&query(llm, enc)).unwrap().tflops()
}

fn all(parts: Vec<Outcome>) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for p in parts {
        match p {
            Ok(s) => lines.push(s),
            Err(s) => {
                ok = false;
                lines.push(format!("MISS {s}"));
            }
        }
    }
    if ok {
        Ok(lines.join("; "))
    } else {
        Err(lines.join("; "))
    }
}

fn suite(s: Suite) -> Outcome {
    let checks = run_suite(s);
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed)
        .map(|c| format!("{} ({})", c.name, c.detail))
        .collect();
    if failed.is_empty() {
        Ok(format!("{} checks", checks.len()))
    } else {
        Err(failed.join("; "))
    }
}

fn table2() -> Outcome {
    all(vec![
        within("llava", tflops_llava("vicuna-7b", "clip-vit-l-336"), 8.53, 0.005),
        within("saisa", tflops_saisa("vicuna-7b", "clip-vit-l-336"), 2.86, 0.005),
    ])
}

fn table6() -> Outcome {
    all(vec![
        within("llava siglip", tflops_llava("vicuna-7b", "siglip-so400m-384"), 10.63, 0.005),
        within("llava mistral", tflops_llava("mistral-7b", "clip-vit-l-336"), 9.17, 0.005),
        within("saisa siglip", tflops_saisa("vicuna-7b", "siglip-so400m-384"), 3.40, 0.01),
        within("saisa mistral", tflops_saisa("mistral-7b", "clip-vit-l-336"), 2.10, 0.06),
        within("saisa llama3", tflops_saisa("llama3-8b", "clip-vit-l-336"), 2.10, 0.06),
    ])
}

fn ratio() -> Outcome {
    let r = flops_ratio(&query("vicuna-7b", "clip-vit-l-336")).unwrap();
    let line = format!("ratio {r:.4}");
    if (0.325..=0.345).contains(&r) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn train_once(dir: &std::path::Path, tag: &str) -> Result<(f64, f64, Vec<u8>, Vec<u8>), String> {
    let ckpt = dir.join(format!("{tag}.ckpt"));
    let log = dir.join(format!("{tag}.csv"));
    let out = Command::new(env!("CARGO_BIN_EXE_saisa"))
        .args(["train", "--variant", "saisa", "--task", "feature-argmax", "--stage", "both"])
        .args(["--steps", "300", "--seed", "1", "--format", "json"])
        .arg("--ckpt")
        .arg(&ckpt)
        .arg("--log")
        .arg(&log)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(String::from_utf8_lossy(&out.stderr).into_owned());
    }
    let doc: serde_json::Value =
        serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let initial = doc["initial_eval_loss"].as_f64().ok_or("no initial loss")?;
    let last = doc["final_eval_loss"].as_f64().ok_or("no final loss")?;
    let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| e.to_string());
    Ok((initial, last, read(&ckpt)?, read(&log)?))
}

fn training() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (i1, f1, ck1, log1) = train_once(dir.path(), "a")?;
    let (i2, f2, ck2, log2) = train_once(dir.path(), "b")?;
    let reduction = 1.0 - f1 / i1;
    let same = ck1 == ck2 && log1 == log2 && i1.to_bits() == i2.to_bits() && f1.to_bits() == f2.to_bits();
    let line = format!(
        "eval loss {i1:.4} -> {f1:.4} ({:.1}% reduction), reruns bitwise identical: {same}",
        reduction * 100.0
    );
    if reduction >= 0.5 && same {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("inference FLOPs, vicuna-7b + clip", table2),
        ("inference FLOPs, other encoders and LLMs", table6),
        ("saisa / llava ratio", ratio),
        ("closed form equals instrumented count", || suite(Suite::FlopsOracle)),
        ("naavit equals causal text rows", || suite(Suite::Equivalence)),
        ("analytic gradients match finite differences", || suite(Suite::Gradients)),
        ("architectural invariants", || suite(Suite::Invariants)),
        ("two-stage procedure", || suite(Suite::TwoStage)),
        ("training smoke test", training),
        ("ratio monotone in v", || suite(Suite::Sweep)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        let (mark, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("{mark} criterion {}: {name} [{secs:.2}s] {detail}", i + 1);
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
