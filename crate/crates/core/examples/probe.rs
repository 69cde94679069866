// Scratch probe; not part of the deliverable.
use kansa::bench::heat_problem;
use kansa::geometry::{equispaced_grid, Domain};
use kansa::solver::{solve, SchemeConfig};
use kansa::KernelSpec;

fn main() {
    let half_pi = std::f64::consts::FRAC_PI_2;
    let dom = Domain::rectangle(vec![-half_pi, -half_pi], vec![half_pi, half_pi]).unwrap();
    let problem = heat_problem();
    let scheme = SchemeConfig::new(100, 1.0).unwrap();
    let sites = equispaced_grid(&dom, 5).unwrap();
    for alpha in [0.03, 0.04, 0.05, 0.06, 0.08, 0.0988, 0.12, 0.15, 0.2] {
        let kernel = KernelSpec::gaussian(alpha).unwrap();
        match solve(&problem, &scheme, kernel, &sites, Some(&dom)) {
            Ok(sol) => {
                let mut max_err = 0.0f64;
                for (j, point) in sites.points().iter().enumerate() {
                    let exact = problem.exact(0.0, point).unwrap();
                    max_err = max_err.max((sol.values(0)[j] - exact).abs());
                }
                println!("alpha={alpha:6.4} max site error = {max_err:9.3e}");
            }
            Err(e) => println!("alpha={alpha:6.4} failed: {e}"),
        }
    }
}
