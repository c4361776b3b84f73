use std::fs;

#[ecall]
pub fn ecall_main(input: &[u8]) -> u32 {
    let cfg = helper(input);
    checksum(cfg)
}

fn helper(input: &[u8]) -> Vec<u8> {
    // fs::read in a comment is not a use
    reader("config.toml")
}

fn reader(path: &str) -> Vec<u8> {
    std::fs::read(path).unwrap_or_default()
}

fn checksum(data: Vec<u8>) -> u32 {
    data.iter().map(|b| *b as u32).sum()
}
