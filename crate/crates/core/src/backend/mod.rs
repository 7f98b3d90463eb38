//! Frame layout and the register-machine executor over LIMPLE.

mod frame;
mod inline;
mod vm;

pub use frame::frame_layout;
pub use inline::{certain, inline_for, inline_primitive_table, InlineOp, InlinePrim};
pub use vm::{vm_exec, vm_install, VmFunction, VmUnit};
