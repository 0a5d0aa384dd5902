use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use avatarforge_core::deform::SpaceKind;
use avatarforge_core::error::Error;
use avatarforge_core::guidance::wire::*;
use avatarforge_core::guidance::{
    add_noise, sds_grad_at, sds_pixel_grad, Denoiser, GuidanceRequest, MockDenoiser, MockTarget, NoiseSchedule,
    RemoteConfig, RemoteDenoiser, SdsQuery,
};
use avatarforge_core::render::{LatentImage, ViewTag};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

const QUERY: SdsQuery = SdsQuery {
    prompt: "a person",
    view_tag: ViewTag::Front,
    guidance_scale: 100.0,
};

fn latent(width: usize, height: usize, data: Vec<f64>) -> LatentImage {
    let mut img = LatentImage::zeros(width, height, SpaceKind::Canonical);
    img.features = data;
    img
}

fn fixture(name: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/wire").join(name);
    std::fs::read_to_string(p).unwrap()
}

fn fixture_hwc(name: &str) -> Vec<f64> {
    let v: Vec<Vec<Vec<f64>>> = serde_json::from_str(&fixture(name)).unwrap();
    v.into_iter().flatten().flatten().collect()
}

#[test]
fn noising_closed_form() {
    let x = [0.3, -1.2, 2.0, 0.0];
    let eps = [1.0, 0.5, -0.25, 2.0];
    let xt = add_noise(&x, &eps, 0.25).unwrap();
    for i in 0..4 {
        assert!((xt[i] - (0.5 * x[i] + 0.866025 * eps[i])).abs() < 1e-6);
    }
}

#[test]
fn mock_closed_form_at_quarter_alpha() {
    let mock = MockDenoiser::new(MockTarget::Flat([0.0; 4]));
    let eps0 = [0.7, -0.1, 0.2, 1.5];
    let req = GuidanceRequest {
        width: 1,
        height: 1,
        noisy_latent: eps0.to_vec(),
        t: 0,
        alpha_bar: 0.25,
        prompt: "p".into(),
        view_tag: ViewTag::Side,
        guidance_scale: 1.0,
    };
    let out = mock.predict_noise(&req).unwrap();
    for i in 0..4 {
        assert!((out[i] - eps0[i] / 0.75f64.sqrt()).abs() < 1e-12);
    }
}

#[test]
fn monte_carlo_mean_matches_expected_gradient() {
    let schedule = NoiseSchedule::default();
    let target = [0.4, -0.2, 0.1, 0.3];
    let mock = MockDenoiser::new(MockTarget::Flat(target));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<f64> = (0..8 * 8 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let img = latent(8, 8, x.clone());
    for t in [50, 300, 700, 950] {
        let ab = schedule.alpha_bar(t);
        let k = schedule.weight(t) * ab.sqrt() / (1.0 - ab).sqrt();
        let mut mean = vec![0.0; x.len()];
        for _ in 0..1000 {
            let eps: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
            let g = sds_grad_at(&mock, &schedule, &img, &QUERY, t, &eps).unwrap();
            for (m, v) in mean.iter_mut().zip(g) {
                *m += v / 1000.0;
            }
        }
        let expect: Vec<f64> = x.iter().enumerate().map(|(i, v)| k * (v - target[i % 4])).collect();
        let err = mean.iter().zip(&expect).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale = expect.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(err <= 0.05 * scale, "t={t}: {err} vs {scale}");
    }
}

#[test]
fn on_target_mean_gradient_vanishes() {
    let schedule = NoiseSchedule::default();
    let target = [0.4; 4];
    let mock = MockDenoiser::new(MockTarget::Flat(target));
    let img = latent(4, 4, target.repeat(16));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut mean = vec![0.0; 64];
    for _ in 0..1000 {
        let s = sds_pixel_grad(&mock, &schedule, &img, &QUERY, &mut rng).unwrap();
        for (m, v) in mean.iter_mut().zip(s.grad) {
            *m += v / 1000.0;
        }
    }
    assert!(mean.iter().map(|v| v * v).sum::<f64>().sqrt() < 0.05);
}

#[test]
fn raw_pixel_descent_converges() {
    let schedule = NoiseSchedule::default();
    let mock = MockDenoiser::new(MockTarget::Flat([0.4; 4]));
    let z = [0.4; 4].repeat(256);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut img = latent(16, 16, (0..16 * 16 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let dist = |x: &[f64]| x.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    let initial = dist(&img.features);
    let mut prev = initial;
    for _ in 0..200 {
        let s = sds_pixel_grad(&mock, &schedule, &img, &QUERY, &mut rng).unwrap();
        for (x, g) in img.features.iter_mut().zip(&s.grad) {
            *x -= 0.5 * g;
        }
        let d = dist(&img.features);
        assert!(d <= prev);
        prev = d;
    }
    assert!(prev < 0.01 * initial, "{prev} of {initial}");
}

#[test]
fn sds_is_reproducible() {
    let schedule = NoiseSchedule::default();
    let mock = MockDenoiser::new(MockTarget::Flat([0.1; 4]));
    let img = latent(4, 4, vec![0.3; 64]);
    let a = sds_pixel_grad(&mock, &schedule, &img, &QUERY, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    let b = sds_pixel_grad(&mock, &schedule, &img, &QUERY, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wire_tensor_matches_golden_layout() {
    let x = fixture_hwc("latent_hwc.json");
    let t = WireTensor::from_hwc(&x, 3, 2);
    let req: DenoiseRequest = serde_json::from_str(&fixture("denoise_request.json")).unwrap();
    assert_eq!(req.latent, t);
    assert_eq!(req.latent.to_hwc(3, 2).unwrap(), x);
    let resp: DenoiseResponse = serde_json::from_str(&fixture("denoise_response.json")).unwrap();
    let as_f32 = |v: Vec<f64>| v.into_iter().map(|x| x as f32).collect::<Vec<_>>();
    assert_eq!(as_f32(resp.eps.to_hwc(3, 2).unwrap()), as_f32(fixture_hwc("eps_hwc.json")));
    assert!(resp.eps.to_hwc(2, 3).is_err());
}

#[test]
fn golden_bodies_round_trip_byte_for_byte() {
    let x = fixture_hwc("latent_hwc.json");
    let eps = fixture_hwc("eps_hwc.json");
    let encoded = [
        ("health_response.json", serde_json::to_string(&HealthResponse { model: "stub-echo".into() })),
        ("embed_request.json", serde_json::to_string(&EmbedRequest { prompt: "a person, front view".into() })),
        ("embed_response.json", serde_json::to_string(&EmbedResponse { prompt_id: "p0".into() })),
        (
            "denoise_request.json",
            serde_json::to_string(&DenoiseRequest {
                prompt_id: "p0".into(),
                view_tag: ViewTag::Front,
                t: 500,
                guidance_scale: 100.0,
                latent: WireTensor::from_hwc(&x, 3, 2),
            }),
        ),
        ("denoise_response.json", serde_json::to_string(&DenoiseResponse { eps: WireTensor::from_hwc(&eps, 3, 2) })),
        ("decode_request.json", serde_json::to_string(&DecodeRequest { latent: WireTensor::from_hwc(&x, 3, 2) })),
        ("decode_response.json", serde_json::to_string(&DecodeResponse { png: "iVBORw0KGgo=".into() })),
    ];
    for (name, body) in encoded {
        assert_eq!(body.unwrap(), fixture(name), "{name}");
    }
    fn reencode<T: serde::de::DeserializeOwned + serde::Serialize>(s: &str) -> String {
        serde_json::to_string(&serde_json::from_str::<T>(s).unwrap()).unwrap()
    }
    for name in ["denoise_request.json", "decode_request.json"] {
        let s = fixture(name);
        let again = if name.starts_with("denoise") {
            reencode::<DenoiseRequest>(&s)
        } else {
            reencode::<DecodeRequest>(&s)
        };
        assert_eq!(again, s);
    }
}

/// Loopback bridge that answers `/denoise` with ε̂ = 0 of the request's shape.
struct Stub {
    url: String,
    denoise_calls: Arc<AtomicUsize>,
    server: Arc<tiny_http::Server>,
    handle: Option<JoinHandle<()>>,
}

impl Stub {
    fn start() -> Self {
        let server = Arc::new(tiny_http::Server::http("127.0.0.1:0").unwrap());
        let url = format!("http://{}", server.server_addr().to_ip().unwrap());
        let calls = Arc::new(AtomicUsize::new(0));
        let (srv, counter) = (server.clone(), calls.clone());
        let handle = std::thread::spawn(move || {
            for mut req in srv.incoming_requests() {
                let mut body = String::new();
                req.as_reader().read_to_string(&mut body).unwrap();
                let reply = match req.url() {
                    "/health" => serde_json::to_string(&HealthResponse { model: "stub-echo".into() }).unwrap(),
                    "/embed" => serde_json::to_string(&EmbedResponse { prompt_id: "p0".into() }).unwrap(),
                    "/denoise" => {
                        counter.fetch_add(1, Ordering::SeqCst);
                        let r: DenoiseRequest = serde_json::from_str(&body).unwrap();
                        let (h, w) = (r.latent.shape[1], r.latent.shape[2]);
                        let eps = WireTensor::from_hwc(&vec![0.0; h * w * 4], w, h);
                        serde_json::to_string(&DenoiseResponse { eps }).unwrap()
                    }
                    "/decode" => serde_json::to_string(&DecodeResponse { png: "iVBORw0KGgo=".into() }).unwrap(),
                    _ => {
                        req.respond(tiny_http::Response::empty(404)).unwrap();
                        continue;
                    }
                };
                req.respond(tiny_http::Response::from_string(reply)).unwrap();
            }
        });
        Self {
            url,
            denoise_calls: calls,
            server,
            handle: Some(handle),
        }
    }

    fn client(&self) -> RemoteDenoiser {
        RemoteDenoiser::new(RemoteConfig {
            url: self.url.clone(),
            timeout_secs: 10.0,
            attempts: 1,
            backoff_ms: 1,
        })
    }
}

impl Drop for Stub {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            h.join().unwrap();
        }
    }
}

#[test]
fn remote_client_against_stub_bridge() {
    let stub = Stub::start();
    let client = stub.client();
    assert_eq!(client.health().unwrap(), "stub-echo");
    assert_eq!(client.decode(&[0.0; 16], 2, 2).unwrap(), b"\x89PNG\r\n\x1a\n");

    let schedule = NoiseSchedule::default();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let img = latent(64, 64, (0..64 * 64 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let eps: Vec<f64> = (0..img.features.len()).map(|_| rng.sample(StandardNormal)).collect();
    let t = 400;
    let g = sds_grad_at(&client, &schedule, &img, &QUERY, t, &eps).unwrap();
    assert_eq!(g.len(), eps.len());
    let w = schedule.weight(t);
    for (gi, e) in g.iter().zip(&eps) {
        assert_eq!(*gi, -w * e);
    }

    let small = latent(5, 3, vec![0.1; 60]);
    let s = sds_pixel_grad(&client, &schedule, &small, &QUERY, &mut rng).unwrap();
    assert_eq!(s.grad.len(), 60);
    assert_eq!(stub.denoise_calls.load(Ordering::SeqCst), 2);
}

#[test]
fn unreachable_bridge_is_a_denoiser_error() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let client = RemoteDenoiser::new(RemoteConfig {
        url: format!("http://127.0.0.1:{port}"),
        timeout_secs: 2.0,
        attempts: 2,
        backoff_ms: 1,
    });
    assert!(matches!(client.health(), Err(Error::Denoiser(_))));
    let img = latent(2, 2, vec![0.0; 16]);
    let r = sds_grad_at(&client, &NoiseSchedule::default(), &img, &QUERY, 100, &[0.0; 16]);
    assert!(matches!(r, Err(Error::Denoiser(_))));
}
