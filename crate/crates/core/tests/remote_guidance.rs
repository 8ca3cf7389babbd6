//! Remote guidance client against an in-process HTTP stub of the service.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sdfill::guidance::wire::{self, SdsRequestBody};
use sdfill::guidance::{
    sample_noise, sds_gradient, GuidanceRequest, MockGuidance, NoiseSchedule, ReferenceView, RemoteConfig,
    RemoteGuidance, ViewAngles,
};
use sdfill::Error;

#[derive(Clone)]
enum Mode {
    Echo,
    /// Closed-form pull toward a fixed target image.
    Target(Vec<f64>),
    Malformed,
    Status(u16),
    /// Answer 503 for the first `n` requests, then echo.
    FlakyThenEcho(usize),
    WrongShape,
}

struct Stub {
    url: String,
    hits: Arc<AtomicUsize>,
    peak: Arc<AtomicUsize>,
}

fn spawn_stub(mode: Mode, delay: Duration) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let active = Arc::new(AtomicUsize::new(0));
    let peak = Arc::new(AtomicUsize::new(0));
    let (h, a, p) = (hits.clone(), active.clone(), peak.clone());
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (mode, h, a, p) = (mode.clone(), h.clone(), a.clone(), p.clone());
            std::thread::spawn(move || {
                let now = a.fetch_add(1, Ordering::SeqCst) + 1;
                p.fetch_max(now, Ordering::SeqCst);
                handle(stream, &mode, &h, delay);
                a.fetch_sub(1, Ordering::SeqCst);
            });
        }
    });
    Stub { url, hits, peak }
}

fn handle(mut stream: TcpStream, mode: &Mode, hits: &AtomicUsize, delay: Duration) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut request_line = String::new();
    reader.read_line(&mut request_line).unwrap();
    let mut length = 0;
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        if let Some((k, v)) = line.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                length = v.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let n = hits.fetch_add(1, Ordering::SeqCst);
    std::thread::sleep(delay);

    let (status, reply) = if request_line.starts_with("GET /v1/health") {
        (200, r#"{"status":"ok","model_id":"stub"}"#.to_string())
    } else {
        respond(mode, n, &body)
    };
    let reason = if status == 200 { "OK" } else { "Error" };
    let _ = write!(
        stream,
        "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
        reply.len()
    );
}

fn respond(mode: &Mode, n: usize, body: &[u8]) -> (u16, String) {
    let req: SdsRequestBody = match serde_json::from_slice(body) {
        Ok(r) => r,
        Err(e) => return (400, format!("{{\"error\":\"{e}\"}}")),
    };
    let len = req.width * req.height * 3;
    let image = wire::decode_f32(&req.image_b64, len, "image_b64").unwrap();
    let eps = wire::decode_f32(&req.epsilon_b64, len, "epsilon_b64").unwrap();
    let schedule = NoiseSchedule::default();
    let ok = |grad: &[f64]| {
        (200, serde_json::json!({"grad_b64": wire::encode_f32(grad), "model_id": "stub"}).to_string())
    };
    match mode {
        Mode::Echo => ok(&vec![0.0; len]),
        Mode::FlakyThenEcho(k) if n >= *k => ok(&vec![0.0; len]),
        Mode::FlakyThenEcho(_) => (503, "{\"error\":\"loading\"}".into()),
        Mode::Target(target) => {
            // Same arithmetic a service in target-image mode performs.
            let ab = schedule.alpha_bar(req.t);
            let w = schedule.weight(req.t);
            let grad: Vec<f64> = (0..len)
                .map(|i| {
                    let noised = ab.sqrt() * image[i] + (1.0 - ab).sqrt() * eps[i];
                    let eps_hat = (noised - ab.sqrt() * target[i]) / (1.0 - ab).sqrt();
                    w * (eps_hat - eps[i])
                })
                .collect();
            ok(&grad)
        }
        Mode::Malformed => (200, "{\"grad_b64\": 17".into()),
        Mode::Status(s) => (*s, "{\"error\":\"nope\"}".into()),
        Mode::WrongShape => ok(&vec![0.0; len - 3]),
    }
}

fn quick_config(url: &str) -> RemoteConfig {
    RemoteConfig {
        timeout: Duration::from_secs(5),
        retries: 2,
        initial_backoff: Duration::from_millis(5),
        ..RemoteConfig::new(url)
    }
}

fn request(w: usize, h: usize, seed: u64) -> GuidanceRequest {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GuidanceRequest {
        width: w,
        height: h,
        image: (0..w * h * 3).map(|_| rng.random::<f32>() as f64).collect(),
        prompt: "a sphere".into(),
        view_suffix: "side view".into(),
        t: rng.random_range(20..=980),
        epsilon: sample_noise(w * h * 3, &mut rng).into_iter().map(|v| v as f32 as f64).collect(),
        guidance_scale: 100.0,
        background: [0.0; 3],
        view: Some(ViewAngles { azimuth: 0.0, elevation: 0.0 }),
    }
}

#[test]
fn echo_stub_gives_zero_gradient() {
    let stub = spawn_stub(Mode::Echo, Duration::ZERO);
    let client = RemoteGuidance::new(quick_config(&stub.url)).unwrap();
    assert_eq!(client.health().unwrap().status, "ok");
    let g = sds_gradient(&request(8, 6, 1), &client, &NoiseSchedule::default()).unwrap();
    assert_eq!(g.grad.len(), 8 * 6 * 3);
    assert!(g.grad.iter().all(|v| *v == 0.0));
    assert_eq!(g.model_id, "stub");
}

#[test]
fn target_stub_matches_in_process_mock() {
    let (w, h) = (6, 5);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let target: Vec<f64> = (0..w * h * 3).map(|_| rng.random::<f32>() as f64).collect();
    let stub = spawn_stub(Mode::Target(target.clone()), Duration::ZERO);
    let client = RemoteGuidance::new(quick_config(&stub.url)).unwrap();
    let reference = ReferenceView::new(
        ViewAngles { azimuth: 0.0, elevation: 0.0 },
        w,
        h,
        target,
        vec![1.0; w * h],
    )
    .unwrap();
    let mock = MockGuidance::new(vec![reference]).unwrap();
    let schedule = NoiseSchedule::default();
    for seed in 0..10 {
        let req = request(w, h, seed);
        let remote = sds_gradient(&req, &client, &schedule).unwrap();
        let local = sds_gradient(&req, &mock, &schedule).unwrap();
        for (a, b) in remote.grad.iter().zip(&local.grad) {
            assert!((a - b).abs() <= 1e-5 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }
}

#[test]
fn malformed_response_is_a_protocol_error() {
    let stub = spawn_stub(Mode::Malformed, Duration::ZERO);
    let client = RemoteGuidance::new(quick_config(&stub.url)).unwrap();
    let err = sds_gradient(&request(2, 2, 0), &client, &NoiseSchedule::default()).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn wrong_gradient_shape_is_a_protocol_error() {
    let stub = spawn_stub(Mode::WrongShape, Duration::ZERO);
    let client = RemoteGuidance::new(quick_config(&stub.url)).unwrap();
    let err = sds_gradient(&request(3, 2, 0), &client, &NoiseSchedule::default()).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
}

#[test]
fn client_errors_are_not_retried() {
    let stub = spawn_stub(Mode::Status(413), Duration::ZERO);
    let client = RemoteGuidance::new(quick_config(&stub.url)).unwrap();
    let err = sds_gradient(&request(2, 2, 0), &client, &NoiseSchedule::default()).unwrap_err();
    assert!(matches!(err, Error::Protocol(_)), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn server_errors_are_retried_then_succeed() {
    let stub = spawn_stub(Mode::FlakyThenEcho(2), Duration::ZERO);
    let client = RemoteGuidance::new(quick_config(&stub.url)).unwrap();
    let g = sds_gradient(&request(2, 2, 0), &client, &NoiseSchedule::default()).unwrap();
    assert!(g.grad.iter().all(|v| *v == 0.0));
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn persistent_server_errors_exhaust_retries() {
    let stub = spawn_stub(Mode::Status(503), Duration::ZERO);
    let client = RemoteGuidance::new(quick_config(&stub.url)).unwrap();
    let err = sds_gradient(&request(2, 2, 0), &client, &NoiseSchedule::default()).unwrap_err();
    assert!(matches!(err, Error::GuidanceUnavailable(_)), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 3);
}

#[test]
fn unreachable_endpoint_is_unavailable() {
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = RemoteGuidance::new(quick_config(&format!("http://127.0.0.1:{port}"))).unwrap();
    let err = sds_gradient(&request(2, 2, 0), &client, &NoiseSchedule::default()).unwrap_err();
    assert!(matches!(err, Error::GuidanceUnavailable(_)), "{err}");
}

#[test]
fn oversize_image_is_rejected_before_any_request() {
    let stub = spawn_stub(Mode::Echo, Duration::ZERO);
    let cfg = RemoteConfig { max_pixels: 16, ..quick_config(&stub.url) };
    let client = RemoteGuidance::new(cfg).unwrap();
    let err = sds_gradient(&request(5, 4, 0), &client, &NoiseSchedule::default()).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    assert_eq!(stub.hits.load(Ordering::SeqCst), 0);
}

#[test]
fn in_flight_requests_are_capped() {
    let stub = spawn_stub(Mode::Echo, Duration::from_millis(60));
    let cfg = RemoteConfig { max_in_flight: 2, ..quick_config(&stub.url) };
    let client = Arc::new(RemoteGuidance::new(cfg).unwrap());
    let handles: Vec<_> = (0..6)
        .map(|i| {
            let c = client.clone();
            std::thread::spawn(move || sds_gradient(&request(2, 2, i), c.as_ref(), &NoiseSchedule::default()).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    assert_eq!(stub.hits.load(Ordering::SeqCst), 6);
    assert!(stub.peak.load(Ordering::SeqCst) <= 2);
}

#[test]
fn non_http_endpoint_is_rejected() {
    assert!(RemoteGuidance::new(RemoteConfig::new("localhost:8000")).is_err());
}
