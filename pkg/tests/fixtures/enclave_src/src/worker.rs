// @ecall
pub extern "C" fn ecall_spawn() {
    spawner();
}

fn spawner() {
    let _h = std::thread::spawn(|| {
        let t = SystemTime::now();
        drop(t);
    });
}

fn unused_entropy() -> u64 {
    rand::random::<u64>()
}
