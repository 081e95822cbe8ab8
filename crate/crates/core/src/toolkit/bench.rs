use std::time::Instant;

use serde::Serialize;

use super::spawn_local_pair;
use crate::error::{Error, Result};
use crate::model::{Depth, PolicyKind, Value};

#[derive(Clone, Debug, Serialize)]
pub struct BenchReport {
    pub calls: usize,
    pub mean_without_policy_ms: f64,
    pub mean_with_policy_ms: f64,
    /// (with - without) / without
    pub overhead_ratio: f64,
}

const BLOCK: usize = 50;
const WARMUP: usize = 200;

/// Times a one-argument call whose argument and return value both travel by
/// reference, with rule resolution bypassed and with a method rule and a
/// return rule installed. The two modes alternate in blocks so drift in the
/// machine's load affects both equally.
pub fn bench_policy_overhead(calls: usize) -> Result<BenchReport> {
    if calls == 0 {
        return Err(Error::protocol("bench needs at least one call"));
    }
    let pair = spawn_local_pair()?;
    let (server, client) = (pair.a.runtime(), pair.b.runtime());
    for rt in [server, client] {
        rt.policy()
            .set_method_policy("Echo", "echo", PolicyKind::ByReference, Depth::Unbounded, false)?;
        rt.policy().set_return_value_policy("Echo", "echo", PolicyKind::ByReference, false)?;
    }
    let echo = server.registry().construct("Echo", &[])?;
    server.deploy(&echo, None, Some("Echo"))?;
    let handle = client.get_handle(server.endpoint().host(), server.endpoint().port(), "Echo")?;
    let msg = Value::Object(client.registry().construct("Message", &[Value::str("ping")])?);

    let call = |evaluate: bool| -> Result<f64> {
        server.set_policy_evaluation(evaluate);
        client.set_policy_evaluation(evaluate);
        let start = Instant::now();
        let back = handle.invoke("echo", std::slice::from_ref(&msg))?;
        let ms = start.elapsed().as_secs_f64() * 1e3;
        if !back.same(&msg) {
            return Err(Error::protocol("echo did not loop back to the original object"));
        }
        Ok(ms)
    };
    for i in 0..WARMUP {
        call(i % 2 == 0)?;
    }
    let (mut without, mut with) = (Vec::with_capacity(calls), Vec::with_capacity(calls));
    let mut round = 0;
    while without.len() < calls || with.len() < calls {
        let evaluate = round % 2 == 1;
        let samples = if evaluate { &mut with } else { &mut without };
        for _ in 0..BLOCK.min(calls - samples.len()) {
            samples.push(call(evaluate)?);
        }
        round += 1;
    }
    server.set_policy_evaluation(true);
    client.set_policy_evaluation(true);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&without), mean(&with));
    Ok(BenchReport {
        calls,
        mean_without_policy_ms: a,
        mean_with_policy_ms: b,
        overhead_ratio: (b - a) / a,
    })
}
