fn main() {
    std::process::exit(bpnc::cli::main_entry());
}
