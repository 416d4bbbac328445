use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use dgsolver::predictors::{
    builtin_predictor, make_constant_predictor, make_gaussian_oracle, EchoPredictor,
};
use dgsolver::protocol::wire::{read_frame, write_frame, Frame, MsgType, PredictRequest, CAP_GRADIENT};
use dgsolver::protocol::{
    conformance_check, serve, ConformanceOptions, Connection, ExternalPredictor, PredictResponse,
};
use dgsolver::schedule::{build_schedule, ScheduleConfig};
use dgsolver::{solve, Predictor, SeededRng, SolverConfig, TensorField};

fn spawn_server(predictor: Arc<dyn Predictor>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            let p = Arc::clone(&predictor);
            thread::spawn(move || {
                let reader = stream.try_clone().unwrap();
                let _ = serve(reader, stream, p.as_ref());
            });
        }
    });
    addr
}

// Answers the handshake, then replies to every request using `reply`.
fn spawn_raw_server(reply: impl Fn(&PredictRequest) -> Frame + Send + 'static) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        while let Ok(Some(f)) = read_frame(&mut s) {
            let out = if f.msg_type == MsgType::Hello as u8 {
                Frame::new(MsgType::HelloAck, vec![0])
            } else {
                match PredictRequest::decode(&f.payload) {
                    Ok(req) => reply(&req),
                    Err(e) => PredictResponse::error(dgsolver::protocol::Status::Malformed, e.to_string()).to_frame(),
                }
            };
            if write_frame(&mut s, &out).is_err() {
                break;
            }
        }
    });
    addr
}

fn connect(addr: &str) -> ExternalPredictor {
    ExternalPredictor::open(&format!("tcp:{addr}"), Duration::from_secs(10)).unwrap()
}

#[test]
fn builtin_servers_pass_conformance() {
    for kind in ["constant:0.1", "constant:0.1,0.2", "echo", "gaussian:0.2,0.3", "gaussian:0.2,0.3,0.05,3"] {
        let p: Arc<dyn Predictor> = Arc::from(builtin_predictor(kind).unwrap());
        let ext = connect(&spawn_server(Arc::clone(&p)));
        let report = conformance_check(
            &ext,
            ConformanceOptions {
                expected: Some(p.as_ref()),
                byte_exact: kind == "echo",
            },
        );
        assert!(report.all_passed(), "{kind}:\n{report}");
    }
}

#[test]
fn capability_missing_is_reported() {
    struct NoGrad;
    impl Predictor for NoGrad {
        fn predict(&self, q: &dgsolver::Query<'_>) -> dgsolver::Result<dgsolver::PredictorOutput> {
            EchoPredictor.predict(q)
        }
        fn describe(&self) -> String {
            "echo without gradient".into()
        }
    }
    let ext = connect(&spawn_server(Arc::new(NoGrad)));
    assert_eq!(ext.capabilities() & CAP_GRADIENT, 0);
    let report = conformance_check(&ext, ConformanceOptions::default());
    assert!(report.all_passed(), "{report}");
}

#[test]
fn wrong_shape_server_fails_fixtures() {
    let addr = spawn_raw_server(|req| {
        let n = req.state.len() + 1;
        PredictResponse::Ok {
            shape: vec![n],
            res: vec![0.0; n],
            eps: None,
            gradient: None,
        }
        .to_frame()
    });
    let ext = connect(&addr);
    let report = conformance_check(&ext, ConformanceOptions::default());
    assert!(!report.all_passed());
    assert!(report.failures().any(|f| f.detail.contains("shape mismatch")), "{report}");

    let s = build_schedule(ScheduleConfig::default()).unwrap();
    let x = TensorField::filled(&[2, 2], 0.5).unwrap();
    let q = dgsolver::Query::new(&x, &x, 0.5, &s).unwrap();
    let err = ext.predict(&q).unwrap_err();
    assert!(err.to_string().contains("shape mismatch"));
}

#[test]
fn external_solve_matches_in_process() {
    let s = build_schedule(ScheduleConfig::default()).unwrap();
    let mut rng = SeededRng::new(12);
    let it = rng.normal_field(&[8, 8], 0.0, 1.0).unwrap();
    let iin = rng.uniform_field(&[8, 8], 0.0, 1.0).unwrap();
    let cases: Vec<(Arc<dyn Predictor>, SolverConfig)> = vec![
        (Arc::new(make_constant_predictor(0.1, None)), SolverConfig::default()),
        (Arc::new(make_constant_predictor(0.1, Some(0.2))), SolverConfig { order: 3, ups: false, ..Default::default() }),
        (Arc::new(make_gaussian_oracle(0.2, 0.3).unwrap()), SolverConfig { queue: true, ..Default::default() }),
        (
            Arc::new(make_gaussian_oracle(0.2, 0.3).unwrap().with_perturbation(0.05, 3.0)),
            SolverConfig::default(),
        ),
    ];
    for (p, cfg) in cases {
        let ext = connect(&spawn_server(Arc::clone(&p)));
        let local = solve(&cfg, &it, &iin, p.as_ref(), &s).unwrap();
        let remote = solve(&cfg, &it, &iin, &ext, &s).unwrap();
        assert_eq!(local.eval_count, remote.eval_count);
        let d = local.final_state().max_abs_diff(remote.final_state()).unwrap();
        assert!(d < 1e-6, "{}: {d}", p.describe());
    }
}

#[test]
fn silent_server_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let mut buf = [0u8; 64];
        // read the hello and never answer
        let _ = s.read(&mut buf);
        thread::sleep(Duration::from_millis(500));
    });
    let err = Connection::connect_tcp(&addr.to_string(), Duration::from_millis(100))
        .err()
        .expect("handshake must time out");
    assert!(err.to_string().contains("timed out"), "{err}");
    hold.join().unwrap();
}

#[test]
fn version_mismatch_is_rejected() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        let _ = read_frame(&mut s);
        let mut ack = Frame::new(MsgType::HelloAck, vec![0]);
        ack.version = 2;
        s.write_all(&ack.to_bytes()).unwrap();
    });
    let err = Connection::connect_tcp(&addr.to_string(), Duration::from_secs(5)).err().unwrap();
    assert!(err.to_string().contains("version mismatch"), "{err}");
}

#[test]
fn connect_failure_is_an_error() {
    // bind then drop to get a port nobody listens on
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    assert!(TcpStream::connect(("127.0.0.1", port)).is_err());
    assert!(ExternalPredictor::open(&format!("tcp:127.0.0.1:{port}"), Duration::from_secs(1)).is_err());
}

#[test]
fn child_process_transport() {
    // a process that exits immediately fails the handshake
    let err = ExternalPredictor::open("true", Duration::from_secs(5)).err().unwrap();
    assert!(err.to_string().contains("closed"), "{err}");
}
