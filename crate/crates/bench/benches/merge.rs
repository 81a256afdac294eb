use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use handoff::{HandoffState, Nat, NodeId};
use std::hint::black_box;

fn id(s: String) -> NodeId {
    NodeId::new(&s).unwrap()
}

/// A server holding one slot per client, and the clients that opened them.
fn busy_server(clients: usize) -> (HandoffState<Nat>, Vec<HandoffState<Nat>>) {
    let mut server = HandoffState::<Nat>::init(id("S".into()), 1);
    let mut cs = Vec::new();
    for i in 0..clients {
        let c = HandoffState::<Nat>::init(id(format!("C{i}")), 2).incr().unwrap();
        server = server.merge(&c).unwrap();
        cs.push(c);
    }
    (server, cs)
}

fn merge(c: &mut Criterion) {
    let mut g = c.benchmark_group("merge");
    for n in [1usize, 16, 256] {
        let (server, clients) = busy_server(n);
        let reply = server.clone();
        g.throughput(Throughput::Elements(1));
        g.bench_with_input(BenchmarkId::new("client_takes_token", n), &n, |b, _| {
            b.iter(|| clients[0].merge(black_box(&reply)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("server_full_state", n), &n, |b, _| {
            let tier0 = HandoffState::<Nat>::init(id("Z".into()), 0);
            b.iter(|| tier0.merge(black_box(&server)).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("server_view", n), &n, |b, _| {
            b.iter(|| server.view(black_box(&clients[0].id), 2))
        });
    }
    g.finish();
}

criterion_group!(benches, merge);
criterion_main!(benches);
