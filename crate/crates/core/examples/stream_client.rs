//! Starts the session server and talks to it as a console would: read the
//! hello, send commands, watch acks and state messages.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use spinenav::service::{serve, ServerConfig};
use spinenav::sim::{Noise, Scenario};

fn main() {
    let config = ServerConfig {
        addr: "127.0.0.1:0".parse().unwrap(),
        ..ServerConfig::default()
    };
    let server = serve(Arc::new(Scenario::phantom(1, Noise::zero())), config).unwrap();
    let mut stream = TcpStream::connect(server.local_addr()).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
    let mut lines = BufReader::new(stream.try_clone().unwrap()).lines();
    println!("{}", lines.next().unwrap().unwrap());

    for (seq, cmd) in [
        r#"{"cmd":"set_target","id":"LP-L2-L3"}"#,
        r#"{"cmd":"insert","depth":10}"#,
        r#"{"cmd":"jog","axis":"z","delta":-2}"#,
    ]
    .iter()
    .enumerate()
    {
        writeln!(stream, r#"{{"type":"command","seq":{seq},"payload":{cmd}}}"#).unwrap();
    }
    let (mut acks, mut states) = (0, 0);
    while acks < 3 || states == 0 {
        let line = lines.next().unwrap().unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        match v["type"].as_str() {
            Some("ack") => {
                acks += 1;
                println!("ack: {}", v["payload"]);
            }
            Some("state") => {
                states += 1;
                if states == 1 {
                    println!(
                        "state at tick {}: phase {}, hit {}",
                        v["tick"], v["payload"]["phase"], v["payload"]["hit"]
                    );
                }
            }
            _ => {}
        }
    }
    let stats = server.stop();
    println!(
        "{states} states received; server ran {} ticks, max jitter {:.2} ms",
        stats.ticks, stats.max_jitter_ms
    );
}
