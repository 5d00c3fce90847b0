fn main() {
    conrec::tune_allocator();
    let args: Vec<String> = std::env::args().skip(1).collect();
    std::process::exit(conrec::cli::run(&args));
}
