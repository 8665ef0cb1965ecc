use clap::Parser;

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    prescore::cli::Cli::parse().run().await
}
