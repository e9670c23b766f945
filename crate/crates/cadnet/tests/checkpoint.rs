use cadnet::checkpoint::{from_bytes, to_bytes, MAGIC};
use cadnet::harness::{reconstruct, timing_probe};
use cadnet::scenario::default_world;
use cadnet::IoError;
use cadnet_core::model::{Cadnet, ModelConfig, Variant};
use cadnet_core::numerics::{rmsprop_step, OptimizerConfig};
use cadnet_core::world::World;

fn default_net(world: &World, variant: Variant, seed: u64) -> Cadnet {
    let s = &world.spec;
    Cadnet::new(ModelConfig::new(s.grid_size, world.classes.len(), s.frame_dim, s.bounds).for_variant(variant), seed).unwrap()
}

// Gives every parameter a nonzero cache so the round trip covers optimizer state.
fn with_cache(mut net: Cadnet) -> Cadnet {
    for p in net.params.iter_mut() {
        let g: Vec<f32> = p.value.data().iter().map(|v| v * 0.5 + 0.01).collect();
        p.grad.data_mut().copy_from_slice(&g);
    }
    rmsprop_step(&mut net.params, &OptimizerConfig::default(), 0.01);
    net
}

#[test]
fn save_load_save_is_byte_identical() {
    let (w, _) = default_world().unwrap();
    for v in [Variant::Full, Variant::Autoencoder, Variant::WoSkip] {
        let net = with_cache(default_net(&w, v, 3));
        let a = to_bytes(&net).unwrap();
        assert_eq!(&a[..8], MAGIC);
        let back = from_bytes(&a).unwrap();
        assert_eq!(back.config, net.config);
        assert_eq!(back.params, net.params);
        assert_eq!(to_bytes(&back).unwrap(), a);
    }
}

#[test]
fn forward_identical_after_reload() {
    let (w, _) = default_world().unwrap();
    let net = with_cache(default_net(&w, Variant::Full, 4));
    let back = from_bytes(&to_bytes(&net).unwrap()).unwrap();
    let samples = w.generate_normal(8, 1);
    let a = reconstruct(&net, &samples).unwrap();
    let b = reconstruct(&back, &samples).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}

#[test]
fn mismatched_grid_names_parameter_and_shapes() {
    let (w, _) = default_world().unwrap();
    let net = default_net(&w, Variant::Full, 0);
    let mut bytes = to_bytes(&net).unwrap();
    // Rewrite the embedded config to claim a 12x12 grid; the tensors stay 13x13.
    let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    let cfg = String::from_utf8(bytes[16..16 + len].to_vec()).unwrap();
    let patched = cfg.replacen("\"grid_size\":13", "\"grid_size\":12", 1);
    assert_ne!(cfg, patched);
    assert_eq!(cfg.len(), patched.len());
    bytes[16..16 + len].copy_from_slice(patched.as_bytes());
    let msg = from_bytes(&bytes).unwrap_err().to_string();
    assert!(msg.contains("encoder.fc.w"), "{msg}");
    assert!(msg.contains("[4608, 128]") && msg.contains("[5408, 128]"), "{msg}");
}

#[test]
fn corrupt_files_are_rejected() {
    let (w, _) = default_world().unwrap();
    let bytes = to_bytes(&default_net(&w, Variant::Full, 0)).unwrap();
    assert!(matches!(from_bytes(b"NOTACKPT"), Err(IoError::Format(_))));
    let mut v = bytes.clone();
    v[8] = 9;
    assert!(matches!(from_bytes(&v), Err(IoError::Version { found: 9, expected: 1 })));
    assert!(from_bytes(&bytes[..bytes.len() - 3]).is_err());
    let mut long = bytes.clone();
    long.push(0);
    assert!(from_bytes(&long).is_err());
}

#[test]
fn timing_probe_contract() {
    let (w, _) = default_world().unwrap();
    let net = default_net(&w, Variant::Full, 0);
    let s = w.sample_normal(0, 0);
    assert!(timing_probe(&net, &s, 0).is_err());
    let t = timing_probe(&net, &s, 20).unwrap();
    assert!(t.mean_ms >= t.min_ms && t.max_ms >= t.mean_ms);
    assert_eq!(t.runs, 20);
}
