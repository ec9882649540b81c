#![allow(dead_code)]

pub mod statevector;
