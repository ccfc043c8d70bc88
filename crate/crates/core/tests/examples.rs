//! Runs every example's default path so the examples keep compiling and
//! keep working.

macro_rules! example {
    ($name:ident $(, $arg:expr)?) => {
        #[test]
        fn $name() {
            $name::run_example($($arg)?).unwrap();
        }
    };
}

#[allow(dead_code)]
#[path = "../examples/checkpoint_resume.rs"]
mod checkpoint_resume;
#[allow(dead_code)]
#[path = "../examples/evaluate.rs"]
mod evaluate;
#[allow(dead_code)]
#[path = "../examples/grad_diagnostics.rs"]
mod grad_diagnostics;
#[allow(dead_code)]
#[path = "../examples/image_folder.rs"]
mod image_folder;
#[allow(dead_code)]
#[path = "../examples/loss_surface.rs"]
mod loss_surface;
#[allow(dead_code)]
#[path = "../examples/pretrain.rs"]
mod pretrain;
#[allow(dead_code)]
#[path = "../examples/remedy_study.rs"]
mod remedy_study;
#[allow(dead_code)]
#[path = "../examples/synthetic_data.rs"]
mod synthetic_data;
#[allow(dead_code)]
#[path = "../examples/verify_lsq.rs"]
mod verify_lsq;

example!(checkpoint_resume);
example!(evaluate, None);
example!(grad_diagnostics, None);
example!(image_folder, None);
example!(loss_surface, None);
example!(pretrain, None);
example!(remedy_study, None);
example!(synthetic_data);
example!(verify_lsq, None);
