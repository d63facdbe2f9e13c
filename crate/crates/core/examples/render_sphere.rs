//! Volume renders an analytic sphere and compares depth and normals with
//! the closed-form ray intersection.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roomsdf::renderer::{ray_cube_span, render_ray, sample_coarse, AnalyticField, SignedDistance};
use roomsdf::scene_io::Vec3;

struct Sphere(f64);

impl SignedDistance for Sphere {
    fn distance(&self, x: &Vec3) -> f64 {
        x.norm() - self.0
    }

    fn gradient(&self, x: &Vec3) -> Vec3 {
        x.normalize()
    }
}

fn main() -> roomsdf::Result<()> {
    let sphere = Sphere(0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for sharpness in [50.0, 200.0, 800.0] {
        let field = AnalyticField { shape: &sphere, sharpness };
        let (mut depth_err, mut angle_err, mut rays) = (0.0f64, 0.0f64, 0);
        while rays < 100 {
            let o = Vec3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), -0.95);
            let v = (Vec3::new(rng.random_range(-0.2..0.2), rng.random_range(-0.2..0.2), 0.0) - o).normalize();
            let b = o.dot(&v);
            let disc = b * b - (o.norm_squared() - 0.25);
            if disc <= 0.0 {
                continue;
            }
            let hit = -b - disc.sqrt();
            let t = sample_coarse(ray_cube_span(&o, &v, 1.0)?, 512, Some(&mut rng));
            let out = render_ray(&field, &o, &v, &t);
            depth_err = depth_err.max((out.depth - hit).abs());
            let n_true = (o + v * hit).normalize();
            angle_err = angle_err.max(out.normal.normalize().dot(&n_true).clamp(-1.0, 1.0).acos().to_degrees());
            rays += 1;
        }
        println!("s = {sharpness:>5}: max depth error {depth_err:.5}, max normal error {angle_err:.3} deg");
    }
    Ok(())
}
