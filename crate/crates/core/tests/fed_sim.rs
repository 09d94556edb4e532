use fedlab::experiment::{fmnist_like, prepare_data};
use fedlab::sim::{evaluate, run_training, secure_aggregate, TrainingTrace};
use fedlab::trace::{decode_trace, encode_trace, read_trace, write_trace};

fn fmnist_single() -> (fedlab::experiment::PreparedData, fedlab::sim::TrainingConfig) {
    let mut cfg = fmnist_like();
    cfg.seeds = vec![0];
    let data = prepare_data(&cfg).unwrap();
    let job = cfg.jobs().remove(0);
    (data, job)
}

#[test]
fn grid_model_learns_the_heldout_set() {
    let (data, job) = fmnist_single();
    let trace = run_training(&job, &data.dataset, &data.partition).unwrap();
    let acc = evaluate(trace.final_params(), &data.heldout).unwrap();
    assert!(acc >= 0.65, "held-out accuracy {acc}");
    assert_eq!(trace.iterates.len(), job.t_max + 1);
}

#[test]
fn training_is_bit_reproducible_and_traces_roundtrip() {
    let (data, mut job) = fmnist_single();
    job.t_max = 4;
    job.hidden = 100;
    job.oracle_logging = true;
    let a = run_training(&job, &data.dataset, &data.partition).unwrap();
    let b = run_training(&job, &data.dataset, &data.partition).unwrap();
    let bytes = encode_trace(&a).unwrap();
    assert_eq!(bytes, encode_trace(&b).unwrap());

    let decoded: TrainingTrace = decode_trace(&bytes).unwrap();
    assert_eq!(decoded, a);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t.fltrace");
    write_trace(&path, &a).unwrap();
    assert_eq!(read_trace(&path).unwrap(), a);
    assert!(decode_trace(&bytes[..bytes.len() / 2]).is_err());

    job.seed = 1;
    let c = run_training(&job, &data.dataset, &data.partition).unwrap();
    assert_ne!(encode_trace(&c).unwrap(), bytes);
}

#[test]
fn aggregation_of_identical_models_is_exact() {
    let (data, mut job) = fmnist_single();
    job.t_max = 1;
    job.hidden = 50;
    let t = run_training(&job, &data.dataset, &data.partition).unwrap();
    let p = t.final_params().clone();
    let avg = secure_aggregate(&[p.clone(), p.clone(), p.clone()]).unwrap();
    assert_eq!(avg, p);
}
