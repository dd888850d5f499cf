use topoctl_core::handler;
use topoctl_core::ktc::{batch_ktc, incremental_ktc, KtcOptions};
use topoctl_core::sim::{init_world, SimConfig, SimMode};

fn main() {
    let mut cfg = SimConfig::default();
    cfg.node_count = 100;
    cfg.world_side = 250.0;
    cfg.mode = SimMode::Both;
    cfg.seed = 1;
    let mut world = init_world(&cfg);
    // initial classification
    let events = world.pending_events();
    world.apply_batch(&events).unwrap();
    let t0 = std::time::Instant::now();
    incremental_ktc(&mut world.topology, &KtcOptions::new(cfg.k)).unwrap();
    println!("initial incremental: {:?}", t0.elapsed());

    // simulate one interval of mobility by hand
    for _ in 0..10 {
        world.step_mobility();
    }
    let events = world.pending_events();
    println!("batch size: {}", events.len());
    let t0 = std::time::Instant::now();
    world.apply_batch(&events).unwrap();
    println!("apply_batch (real+mirror): {:?}", t0.elapsed());

    let t0 = std::time::Instant::now();
    incremental_ktc(&mut world.topology, &KtcOptions::new(cfg.k)).unwrap();
    println!("incremental: {:?}", t0.elapsed());

    let t0 = std::time::Instant::now();
    let m = world.mirror.as_mut().unwrap();
    batch_ktc(m, &KtcOptions::new(cfg.k)).unwrap();
    println!("batch mirror: {:?}", t0.elapsed());

    // handler cost in isolation
    let e = world.topology.links().next().unwrap().id;
    let w = world.topology.link(e).unwrap().weight;
    let t0 = std::time::Instant::now();
    for _ in 0..100 {
        handler::handle_weight_modification(&mut world.topology, e, w, cfg.k).unwrap();
    }
    println!("100 weight-mod handlers: {:?}", t0.elapsed());
}
