use cgnmt_web::Playground;
use serde_json::Value;

fn parse(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

#[test]
fn translation_json_shapes() {
    let mut p = Playground::create(3).unwrap();
    let src = p.sample();
    let t = parse(&p.translate_json(&src, 1.0, 1.0).unwrap());
    let n_src = t["source"].as_array().unwrap().len();
    let steps = t["steps"].as_array().unwrap().len();
    assert_eq!(n_src, src.split_whitespace().count());
    assert_eq!(t["alpha"].as_array().unwrap().len(), steps);
    assert_eq!(t["gates"].as_array().unwrap().len(), steps);
    for row in t["alpha"].as_array().unwrap() {
        let row: Vec<f64> = row.as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
        assert_eq!(row.len(), n_src);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
    for z in t["gates"].as_array().unwrap().iter().flat_map(|r| r.as_array().unwrap()) {
        let z = z.as_f64().unwrap();
        assert!(z > 0.0 && z < 1.0);
    }
    assert_eq!(t["output"].as_array().unwrap().len(), t["function_word"].as_array().unwrap().len());
    assert!(t["output"].as_array().unwrap().len() <= t["cap"].as_u64().unwrap() as usize);
}

#[test]
fn sweep_has_five_settings_and_rejects_empty_input() {
    let p = Playground::create(4).unwrap();
    let rows = parse(&p.sweep_json("s1 s2 s3").unwrap());
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!((rows[0]["a"].as_f64(), rows[0]["b"].as_f64()), (Some(1.0), Some(1.0)));
    assert!(p.translate_json("   ", 1.0, 1.0).is_err());
    assert!(p.translate_json("s1", 1.5, 1.0).is_err());
}

#[test]
fn epochs_train_and_are_reproducible() {
    let mut a = Playground::create(5).unwrap();
    let mut b = Playground::create(5).unwrap();
    let first = parse(&a.run_epoch().unwrap());
    assert_eq!(first["epoch"], 1);
    assert_eq!(a.run_epoch().unwrap(), {
        b.run_epoch().unwrap();
        b.run_epoch().unwrap()
    });
    let second = parse(&a.run_epoch().unwrap());
    assert!(second["train_loss_per_token"].as_f64().unwrap() < first["train_loss_per_token"].as_f64().unwrap());
    assert_eq!(a.translate_json("s4 s2 s9", 1.0, 0.5).unwrap(), {
        b.run_epoch().unwrap();
        b.translate_json("s4 s2 s9", 1.0, 0.5).unwrap()
    });
}
