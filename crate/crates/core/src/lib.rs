pub mod kinematics;
pub mod datafuse;
pub mod representation;
pub mod denoiser;
pub mod diffusion;
pub mod dno;
pub mod tasks;
pub mod evalcli;
