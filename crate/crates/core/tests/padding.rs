mod support;

use nalgebra::Vector3;
use splatsim::fixtures;
use splatsim::padding::*;
use splatsim::render::rasterize;
use splatsim::scene::{Gaussian, Scene};
use support::hemisphere;

#[test]
fn hemisphere_padding_fills_the_interior() {
    let shell = hemisphere::shell();
    let padded = hemisphere::padded(&shell);
    let added = &padded.gaussians[shell.len()..];
    assert!(added.len() > 100, "only {} padded", added.len());
    let inside = added.iter().filter(|g| fixtures::inside_hemisphere(&g.position, &hemisphere::CENTER, 1.0)).count();
    let frac = inside as f64 / added.len() as f64;
    assert!(frac >= 0.95, "{frac}");
    assert!(added.iter().all(|g| shell.bounds.contains(&g.position, 1e-12)));
    assert!(added.iter().all(|g| g.padded && g.opacity() == 0.0));
    assert_eq!(&padded.gaussians[..shell.len()], &shell.gaussians[..]);
}

#[test]
fn padding_leaves_the_render_unchanged() {
    let shell = hemisphere::shell();
    let padded = hemisphere::padded(&shell);
    let cam = hemisphere::camera();
    assert_eq!(rasterize(&shell, &cam), rasterize(&padded, &cam));
}

#[test]
fn padding_is_idempotent() {
    let shell = hemisphere::shell();
    let once = hemisphere::padded(&shell);
    let twice = hemisphere::padded(&once);
    assert_eq!(once.gaussians, twice.gaussians);
}

#[test]
fn opacity_field_is_additive() {
    let shell = hemisphere::shell();
    let (a, b) = shell.gaussians.split_at(700);
    let mut sa = Scene::new(a.to_vec(), Default::default());
    let mut sb = Scene::new(b.to_vec(), Default::default());
    sa.bounds = shell.bounds;
    sb.bounds = shell.bounds;
    let whole = compute_opacity_field(&shell, 20);
    let fa = compute_opacity_field(&sa, 20);
    let fb = compute_opacity_field(&sb, 20);
    for i in 0..whole.values.len() {
        assert!((whole.values[i] - fa.values[i] - fb.values[i]).abs() < 1e-12);
    }
}

#[test]
fn padded_input_contributes_nothing_to_the_field() {
    let shell = hemisphere::shell();
    let padded = hemisphere::padded(&shell);
    assert_eq!(compute_opacity_field(&shell, 20), compute_opacity_field(&padded, 20));
}

#[test]
fn field_is_deterministic_across_thread_counts() {
    let shell = hemisphere::shell();
    let run = |threads| {
        rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(|| hemisphere::padded(&shell))
    };
    assert_eq!(run(1).gaussians, run(3).gaussians);
}

#[test]
fn single_opaque_wall_pads_behind_it() {
    // Dense sheet at z = 2 seen from the origin: nodes behind it are padded.
    let mut gaussians = Vec::new();
    for i in 0..21 {
        for j in 0..21 {
            let p = Vector3::new(-0.5 + 0.05 * i as f64, -0.5 + 0.05 * j as f64, 2.0);
            gaussians.push(Gaussian::isotropic(p, 0.05, Vector3::repeat(0.5), 0.9));
        }
    }
    let mut s = Scene::new(gaussians, Default::default());
    s.bounds = splatsim::Aabb::new(Vector3::new(-0.5, -0.5, 1.5), Vector3::new(0.5, 0.5, 2.5));
    let field = compute_opacity_field(&s, 11);
    let cam = splatsim::Camera::centered(32, 32, 32.0);
    let out = pad_interior(&s, &field, &cam, 0.1);
    let added = &out.gaussians[s.len()..];
    assert!(!added.is_empty());
    assert!(added.iter().all(|g| g.position.z > 2.0));
}
