mod common;

use common::{check, model_check, op_case, FdStats, MODEL_TOLERANCE, OPS, OP_TOLERANCE};

const OP_SEEDS: u64 = 100;
const MODEL_SEEDS: u64 = 50;

fn op_stats(op: &str) -> FdStats {
    let mut total = FdStats::default();
    for seed in 0..OP_SEEDS {
        let (mut store, build) = op_case(op, seed);
        total.merge(check(op, &mut store, None, &*build));
    }
    total
}

macro_rules! op_tests {
    ($($name:ident => $op:literal),* $(,)?) => {$(
        #[test]
        fn $name() {
            let s = op_stats($op);
            assert!(s.passes(OP_TOLERANCE), "{s:?}");
        }
    )*};
}

op_tests! {
    matmul => "matmul",
    add => "add",
    sub => "sub",
    mul => "mul",
    div => "div",
    add_row => "add_row",
    mul_row => "mul_row",
    scale => "scale",
    add_scalar => "add_scalar",
    relu => "relu",
    softplus => "softplus",
    sqrt => "sqrt",
    abs => "abs",
    acos_clipped => "acos_clipped",
    layer_norm => "layer_norm",
    softmax_lastdim => "softmax_lastdim",
    mean_lastdim => "mean_lastdim",
    sum => "sum",
    mean => "mean",
    concat_rows => "concat_rows",
    concat_cols => "concat_cols",
    slice_rows => "slice_rows",
    slice_cols => "slice_cols",
    transpose => "transpose",
    roll => "roll",
    gather => "gather",
    reshape => "reshape",
    msa_with_bias => "msa_with_bias",
    msa_without_bias => "msa",
    loss_graph => "loss_graph",
}

#[test]
fn op_catalog_is_covered() {
    assert_eq!(OPS.len(), 30);
}

#[test]
fn full_model_matches_central_differences() {
    let mut total = FdStats::default();
    for seed in 0..MODEL_SEEDS {
        total.merge(model_check(seed, 20));
    }
    assert!(total.passes(MODEL_TOLERANCE), "{total:?}");
}
