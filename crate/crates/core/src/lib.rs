pub mod io;
pub mod model;
pub mod opt;
pub mod da_fo;
pub mod rt;
pub mod da_ir;
pub mod settlement;
pub mod verify;
pub mod report;
