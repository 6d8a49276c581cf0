mod common;

use deflicker::autograd::Graph;
use deflicker::net::{ConsistencyNet, GraphWindow, NetConfig};
use deflicker::video::{FrameSequence, VideoTriplet};

fn random_triplet(seed: u64, len: usize, h: usize, w: usize) -> VideoTriplet {
    let mut r = common::rng(seed);
    let raw = common::random_sequence(&mut r, len, h, w);
    let processed = common::random_sequence(&mut r, len, h, w);
    VideoTriplet::new(raw, processed).unwrap()
}

fn live_config() -> NetConfig {
    NetConfig {
        residual_blocks: 2,
        zero_init_output: false,
        ..NetConfig::with_base(4)
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let net = ConsistencyNet::new(live_config(), 11).unwrap();
    let tri = random_triplet(1, 3, 8, 8);
    let g = Graph::new();
    let bound = net.params().bind(&g, true);
    let window = GraphWindow::constants(&g, &tri);
    let rollout = net.pingpong_var(&bound, &window).unwrap();
    let mut loss = rollout.backward[0].sqr().sum();
    for o in &rollout.forward[1..] {
        loss = loss.add(o.sqr().sum());
    }
    let grads = g.backward(loss);
    for (name, grad) in net.params().names().iter().zip(bound.gradients(&grads)) {
        assert!(
            grad.data().iter().all(|v| v.is_finite()),
            "{name} has a non-finite gradient"
        );
        assert!(grad.sq_norm() > 0.0, "{name} receives no gradient");
    }
}

#[test]
fn graph_and_frame_rollouts_agree() {
    let net = ConsistencyNet::new(live_config(), 12).unwrap();
    let tri = random_triplet(2, 4, 12, 8);
    let frames = net.pingpong_rollout(&tri).unwrap();
    let g = Graph::new();
    let bound = net.params().bind(&g, false);
    let window = GraphWindow::constants(&g, &tri);
    let rollout = net.pingpong_var(&bound, &window).unwrap();
    for (a, b) in frames.forward_outputs.iter().zip(&rollout.forward) {
        assert!(a.to_tensor().max_abs_diff(&b.value()) < 1e-12);
    }
    for (t, b) in rollout.backward.iter().enumerate() {
        assert!(frames.backward_at(t).to_tensor().max_abs_diff(&b.value()) < 1e-12);
    }
}

#[test]
fn rollout_is_deterministic_and_shape_preserving() {
    let a = ConsistencyNet::new(live_config(), 5).unwrap();
    let b = ConsistencyNet::new(live_config(), 5).unwrap();
    let c = ConsistencyNet::new(live_config(), 6).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
    for (h, w) in [(4, 4), (8, 12), (20, 16)] {
        let tri = random_triplet(3, 3, h, w);
        let out = a.rollout(&tri).unwrap();
        assert_eq!(out, b.rollout(&tri).unwrap());
        assert_eq!(out.len(), 3);
        assert_eq!(out.dims(), (h, w));
        assert_eq!(out[0], tri.processed[0]);
        assert!(out.iter().all(|f| f.data().iter().all(|v| v.is_finite())));
    }
}

#[test]
fn outputs_depend_on_history() {
    let net = ConsistencyNet::new(live_config(), 7).unwrap();
    let tri = random_triplet(4, 3, 8, 8);
    let mut other = tri.processed.clone().into_frames();
    other[0] = common::random_frame(&mut common::rng(99), 8, 8);
    let changed = VideoTriplet::new(tri.raw.clone(), FrameSequence::new(other).unwrap()).unwrap();
    let a = net.rollout(&tri).unwrap();
    let b = net.rollout(&changed).unwrap();
    assert!(a[2].max_abs_diff(&b[2]) > 0.0);
}
