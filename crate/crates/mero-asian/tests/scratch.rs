use mero_asian::model::{set_one, MuMode};
use mero_asian::pricing::{price_algo2, PriceMethod, PricingRequest};
use mero_asian::quad::{QuadProfile, InversionConfig};

#[test]
fn bias_hunt() {
    let m = set_one(MuMode::Riskneutral{r:0.03}).build().unwrap().0;
    let base = QuadProfile::Table.config();
    let variants: [(&str, InversionConfig); 5] = [
        ("table      (400/400)  ", base),
        ("mellin x2  (800/400)  ", InversionConfig { n_mellin: 800, ..base }),
        ("laplace x2 (400/800)  ", InversionConfig { n_laplace: 800, ..base }),
        ("both x2    (800/800)  ", InversionConfig { n_mellin: 800, n_laplace: 800, ..base }),
        ("both x4   (1600/1600) ", InversionConfig { n_mellin: 1600, n_laplace: 1600, ..base }),
    ];
    for (name, quad) in variants {
        let req = PricingRequest {
            s0: 100.0, strike: 105.0, maturity: 1.0, rate: 0.03,
            method: PriceMethod::HyperExp, n: 40, quad, mc: None,
        };
        let p = price_algo2(&m, &req).unwrap();
        println!("{name}: a2={:.7} (ref 4.728031, diff {:+.2e})  [{:.1}s]", p.price, p.price-4.728031, p.runtime_seconds);
    }
}
