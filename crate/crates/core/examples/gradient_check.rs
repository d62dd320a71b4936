//! Runs the predictor forward on a synthetic scenario and compares backpropagated parameter
//! gradients of a scalar readout with central finite differences.

use trajcast::data::{generate, SyntheticSpec};
use trajcast::predictor::{OutputGrad, Predictor, PredictorConfig};
use trajcast::scenario::Window;

fn main() -> trajcast::Result<()> {
    let cfg = PredictorConfig { channels: 8, history_len: 20, future_len: 30, modes: 6, use_goal: true, use_refine: true };
    let predictor = Predictor::new(cfg, 3)?;
    let scenario = &generate(&SyntheticSpec { scenario_count: 1, seed: 3, ..Default::default() })?[0];
    let window = Window::current(scenario)?;

    let (out, trace) = predictor.forward(&window, None)?;
    println!("{} modes, scores {:?}", out.refined.len(), out.scores);

    // readout: sum of the refined endpoints' x coordinates
    let readout = |p: &Predictor| -> f64 {
        let (o, _) = p.forward(&window, None).unwrap();
        o.refined.iter().map(|t| t.points().last().unwrap().x).sum()
    };
    let mut up = OutputGrad::zeros(&cfg);
    for m in 0..cfg.modes {
        up.refined[(m * cfg.future_len + cfg.future_len - 1) * 2] = 1.0;
    }
    let grad = predictor.backward(&trace, &up)?;

    let h = 1e-5;
    let n = predictor.num_params();
    for i in (0..n).step_by(97).take(12) {
        let mut plus = predictor.params().to_vec();
        plus[i] += h;
        let mut minus = predictor.params().to_vec();
        minus[i] -= h;
        let numeric =
            (readout(&Predictor::from_params(cfg, plus)?) - readout(&Predictor::from_params(cfg, minus)?)) / (2.0 * h);
        println!("param {i:5}: analytic {:+.6e}  numeric {numeric:+.6e}", grad[i]);
    }
    Ok(())
}
