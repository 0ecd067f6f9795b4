//! Regenerates the shipped demo artifacts: `cargo run -p rankcast-core --example make_demo_data -- data`.

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "data".into());
    rankcast_core::demo::write_demo_data(&dir, 0)?;
    println!("wrote demo data to {dir}");
    Ok(())
}
