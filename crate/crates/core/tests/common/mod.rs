#![allow(dead_code)]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use hypmix_core::config::Bundle;
use hypmix_core::environment::{builtin_labelings, sample_states, ActionLabeling};
use hypmix_core::util::stable_seed;
use hypmix_core::{Backend, CalibrationReport, ExperimentPlan, ResponseCache, Runner, LearnerModel};

pub const GOLDEN_HYPOTHESES: [&str; 4] = ["H_G1", "H_P1", "H_P2", "H_G2"];

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn case_study(file: &str) -> Bundle {
    Bundle::load(&repo_root().join("configs/case_study").join(file)).expect("shipped bundle loads")
}

pub fn golden_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden")
}

pub fn golden_path(hyp: &str, labeling: &str) -> PathBuf {
    golden_dir().join(format!("{hyp}_{labeling}.txt"))
}

/// Prompt for a one-hypothesis model under the initial template revision.
pub fn golden_prompt(bundle: &Bundle, hyp: &str, labeling: &ActionLabeling) -> String {
    let h = bundle.catalog.get(hyp).expect("hypothesis").clone();
    let c = bundle.characteristics[&h.characteristic].clone();
    let model = LearnerModel::new().with_characteristic(c, 3, vec![h]);
    let composer = bundle.composer().with_revision("mono", 0).with_revision("uniform", 0);
    let state = sample_states(1, 11, None).unwrap().remove(0);
    composer.compose(&model, &state, labeling).unwrap().rendered().to_string()
}

pub fn labeling(id: &str) -> ActionLabeling {
    builtin_labelings().into_iter().find(|l| l.id() == id).unwrap()
}

/// Initial-template sentence of each case-study hypothesis under labeling A.
pub fn table_sentence(hyp: &str) -> &'static str {
    match hyp {
        "H_G1" => "A learner with a higher geometry proficiency is more likely to make productive measurements (i.e., those that measure distances between pairs of points in the planetary system that are potentially useful to verify if the orbit is elliptical). To make productive measurements is to make one of the following actions: MEASURE-F1-X, MEASURE-F2-X, MEASURE-F1-P, MEASURE-F2-P, MEASURE-A-F1, MEASURE-A-F2.",
        "H_P1" => "A learner with a higher persistence is less likely to abandon the task as the number of measurements increases (i.e., to prematurely exit the session before submitting the right solution). To abandon the task as the number of measurements increases is to make one of the following actions: EXIT.",
        "H_P2" => "A learner with a higher persistence is less likely to abandon the task as the time elapsed increases (i.e., to prematurely exit the session before submitting the right solution). To abandon the task as the time elapsed increases is to make one of the following actions: EXIT.",
        "H_G2" => "As learners get closer and closer to the lower end of the geometry proficiency spectrum (value of 1), they are equally likely to perform the following actions. In other words, such a learner exhibits a uniform distribution over these actions: ",
        _ => panic!("no sentence for {hyp}"),
    }
}

/// The labeling-independent part of the sentence.
pub fn table_stem(hyp: &str) -> &'static str {
    let s = table_sentence(hyp);
    let end = s.rfind("actions:").expect("stem") + "actions:".len();
    &s[..end]
}

/// Chat-completion stand-in. Each reply picks an action from the prompt's
/// action menu by hashing the prompt, so replies depend only on the request.
pub struct StubServer {
    pub url: String,
    pub calls: Arc<AtomicUsize>,
}

impl StubServer {
    pub fn start() -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let counter = calls.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { continue };
                let counter = counter.clone();
                std::thread::spawn(move || serve_connection(stream, &counter));
            }
        });
        Self { url, calls }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

fn serve_connection(stream: TcpStream, calls: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut writer = stream;
    loop {
        let mut len = 0usize;
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line).unwrap_or(0) == 0 {
                return;
            }
            if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                len = v.trim().parse().unwrap_or(0);
            }
            if line == "\r\n" {
                break;
            }
        }
        let mut body = vec![0; len];
        if reader.read_exact(&mut body).is_err() {
            return;
        }
        calls.fetch_add(1, Ordering::SeqCst);
        let request: serde_json::Value = serde_json::from_slice(&body).unwrap();
        let prompt = request["messages"][0]["content"].as_str().unwrap_or_default();
        let menu: Vec<&str> = prompt
            .split("Available actions:\n")
            .nth(1)
            .unwrap_or_default()
            .lines()
            .take_while(|l| l.starts_with("- "))
            .map(|l| &l[2..])
            .collect();
        let pick = menu[(stable_seed(&[prompt.as_bytes()]) % menu.len() as u64) as usize];
        let label = pick.replace("...", "a, b, c");
        let reply = serde_json::json!({
            "choices": [{"message": {"role": "assistant", "content": format!("Thinking it over.\nACTION: {label}")}, "finish_reason": "stop"}],
            "usage": {"prompt_tokens": 10, "completion_tokens": 5}
        })
        .to_string();
        let response = format!(
            "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n{reply}",
            reply.len()
        );
        if writer.write_all(response.as_bytes()).is_err() {
            return;
        }
    }
}

/// Average ranks, computed by counting.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    sxy / (sxx * syy).sqrt()
}

pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for i in 0..=p.len() {
            let mut q = p.clone();
            q.insert(i, n - 1);
            out.push(q);
        }
    }
    out
}

pub fn rho_of_perm(p: &[usize]) -> f64 {
    let n = p.len() as f64;
    let d2: f64 = p.iter().enumerate().map(|(i, &r)| ((i as f64) - r as f64).powi(2)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}

/// Runs the bundle's edit graph and builds its report.
pub fn run_report(bundle: &Bundle, plan: &ExperimentPlan, backend: &dyn Backend, cache: Option<&ResponseCache>) -> CalibrationReport {
    let composer = bundle.composer();
    let graph = bundle.edit_graph().expect("graph builds");
    let runner = Runner::new(&composer, backend, cache, bundle.labelings.clone(), plan.parallelism)
        .unwrap()
        .with_domain(bundle.environment.domain);
    let run = runner.run_graph(plan, &graph).expect("graph runs");
    CalibrationReport::build(&graph, &run.edges, &bundle.config.report).expect("report builds")
}
