//! Trains a small model, starts the HTTP service on a free local port and
//! sends it a few requests over a plain TCP socket.

use std::io::{Read, Write};
use std::net::TcpStream;

use xmoco::cli::{router, ServiceState};
use xmoco::data::{generate_synthetic, SynthSpec};
use xmoco::trainer::fit;
use xmoco::{EncoderConfig, TrainConfig};

fn request(addr: std::net::SocketAddr, method: &str, path: &str, body: &str) -> String {
    let mut s = TcpStream::connect(addr).expect("connect");
    write!(
        s,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .expect("write");
    let mut reply = String::new();
    s.read_to_string(&mut reply).expect("read");
    let (head, body) = reply.split_once("\r\n\r\n").unwrap_or((&reply, ""));
    format!("{} {}", head.lines().next().unwrap_or(""), body)
}

fn main() -> xmoco::Result<()> {
    let ds = generate_synthetic(&SynthSpec {
        n_pairs: 256,
        input_dim_a: 12,
        input_dim_b: 10,
        latent_dim: 4,
        ..SynthSpec::default()
    })?;
    let cfg = TrainConfig {
        batch_size: 32,
        epochs: 10,
        queue_capacity: 128,
        ..TrainConfig::default()
    };
    let enc = |input_dim, seed| EncoderConfig {
        input_dim,
        hidden_dims: vec![16],
        proj_hidden: 16,
        embed_dim: 8,
        seed,
    };
    let (state, _) = fit(&ds, None, &cfg, &enc(12, 1), &enc(10, 2))?;
    let service = ServiceState::new(state.query_a, state.query_b, Some(&ds))?;

    let rt = tokio::runtime::Runtime::new().expect("runtime");
    let listener = rt
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .expect("bind");
    let addr = listener.local_addr().expect("addr");
    rt.spawn(async move { axum::serve(listener, router(service)).await });
    println!("serving on http://{addr}");

    let p = &ds.pairs()[0];
    let fa = serde_json::to_string(&p.feat_a)?;
    let fb = serde_json::to_string(&p.feat_b)?;
    println!("{}", request(addr, "GET", "/v1/health", ""));
    println!("{}", request(addr, "POST", "/v1/match", &format!(r#"{{"feat_a":{fa},"feat_b":{fb}}}"#)));
    println!("{}", request(addr, "POST", "/v1/retrieve", &format!(r#"{{"modality":"a","features":{fa},"k":3}}"#)));
    println!("{}", request(addr, "POST", "/v1/embed", r#"{"modality":"a","features":[[1,2]]}"#));
    Ok(())
}
