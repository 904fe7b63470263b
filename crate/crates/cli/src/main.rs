fn main() {
    let seed = std::env::var(mise_lab::SEED_ENV).ok();
    std::process::exit(mise_lab::main_with_args(std::env::args_os(), seed.as_deref()));
}
