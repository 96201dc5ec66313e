fn main() {
    std::process::exit(commodity_game::cli::run());
}
