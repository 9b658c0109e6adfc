use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Arc;

use collab_core::bus::{conformance, BusServer, InProcessBus, MessageBus, NetworkBus};

fn assert_all(results: Vec<(&'static str, Result<(), String>)>) {
    let failures: Vec<_> = results
        .into_iter()
        .filter_map(|(name, r)| r.err().map(|e| format!("{name}: {e}")))
        .collect();
    assert!(failures.is_empty(), "{failures:#?}");
}

#[test]
fn in_process_bus_conforms() {
    assert_all(conformance::run_all(&|| {
        Arc::new(InProcessBus::new()) as Arc<dyn MessageBus>
    }));
}

#[test]
fn network_bus_conforms() {
    let server = BusServer::start("127.0.0.1:0").unwrap();
    let addr = server.addr();
    let session = AtomicU32::new(0);
    assert_all(conformance::run_all(&|| {
        let id = session.fetch_add(1, Ordering::SeqCst);
        Arc::new(NetworkBus::connect(addr, &format!("s{id}")).unwrap()) as Arc<dyn MessageBus>
    }));
}

#[test]
fn network_sessions_are_namespaced() {
    use collab_core::bus::Channel;
    use std::time::Duration;

    let server = BusServer::start("127.0.0.1:0").unwrap();
    let a = NetworkBus::connect(server.addr(), "a").unwrap();
    let b = NetworkBus::connect(server.addr(), "b").unwrap();
    let sub_b = b.subscribe(&[Channel::Step]).unwrap();
    a.publish(&Channel::Step, b"only a").unwrap();
    a.publish(&Channel::End, b"{}").unwrap();
    assert!(sub_b.recv_timeout(Duration::from_millis(200)).unwrap().is_none());
    // Closing session a leaves b open.
    b.publish(&Channel::Step, b"still open").unwrap();
    let d = sub_b.recv_timeout(Duration::from_secs(2)).unwrap().unwrap();
    assert_eq!(d.payload, b"still open");
}
