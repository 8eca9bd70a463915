pub mod ded;
pub mod feasibility;
pub mod formulation;
pub mod lp;
pub mod milp;
pub mod nccg;
pub mod ptdf;
pub mod synthetic;
pub mod system;
